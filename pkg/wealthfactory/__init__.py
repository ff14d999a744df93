import os

# thread count of numerical libraries, read before numpy loads
if 'WEALTHFACTORY_NTHREADS' in os.environ:
    os.environ.setdefault('OMP_NUM_THREADS', os.environ['WEALTHFACTORY_NTHREADS'])

from ._version import __version__
from .geo import GeoPoint, BBox, SpatialIndex, haversine, nearest, within_radius, within_bbox
from .ingest import DatasetBundle, load_bundle, write_bundle, validate_bundle
from .groundtruth import AssetMatrix, AssetWeights, compute_asset_weights, compute_iwi, aggregate_clusters, compute_ground_truth, relocate, RelocationPlan
from .features import FeatureConfig, LocationSet, FeatureMatrix, assemble, standardize_per_year
from .gbrt import Hyperparams, GBRTEnsemble, fit, predict, importance
from .pipeline import RecencyConfig, WeightConfig, SearchSpec, ModelCard, prepare_dataset, train_final
from .evalreport import nrmse, evaluate, quintile_bins, intersection_table, variability, transfer, pearson
from .mapgen import PovertyMap, infer_places, render_scatter
from .synthkit import SynthSpec, generate, bayes_nrmse
from .utils import setup_logging
