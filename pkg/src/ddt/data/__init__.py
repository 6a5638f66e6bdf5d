"""Loading, cleaning, standardization, augmentation and splitting of multivariate series."""

from .anomaly import GEVBoxplotFilter, LOFDetector, boxplot_bounds, boxplot_flags, gev_boxplot_filter, gev_threshold, lof_scores
from .augment import AugmentSpec, augment, dtw_distance, dtw_warp, log_scale, snr_noise
from .granger import RankDeficiencyWarning, granger_screen
from .impute import gp_posterior, impute_gp
from .io import DataError, SeriesBatch, load_csv, parse_timestamp, time_features, write_csv
from .scaling import ZScoreScaler, wasserstein_check, wasserstein_to_normal, zscore
from .split import LabelWindow, SplitSpec, kmeans, make_windows, stratified_split, subset_deviation
from .synthetic import spike_fixture, synthetic_series
