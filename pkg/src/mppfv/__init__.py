"""Multi-scale pyramid-pooled Fisher vector representations.

Dense local activations are extracted from every level of an image pyramid
in one forward pass per level (fully-connected layers rewritten as
convolutions), reduced by PCA, encoded against a Gaussian-mixture
vocabulary, and pooled with scale-wise normalization into a fixed-length
vector for linear classification and per-patch confidence maps.
"""

from .convnet import (LayerSpec, MacCounter, NetworkSpec, convert_fc_to_conv,
                      dense_activations, forward, load_network,
                      load_network_manifest, mac_count, receptive_field,
                      save_network, toy_network)
from .descriptors import DescriptorSet, PatchGeometry
from .errors import (ConfigurationError, InputError, MppfvError, NumericError,
                     StageError)
from .fisher import FisherVector, encode_fv, l2_normalize, power_normalize
from .gmm import GmmModel, fit_gmm, posteriors, responsibilities
from .kernels import BACKEND
from .metrics import average_precision_11pt, mean_average_precision, top1_accuracy
from .pca import PcaModel, fit_pca, project
from .pipeline import EvalReport, PipelineConfig, run_pipeline, scale_sweep
from .pooling import (PooledRepresentation, pool, pool_ap, pool_csf, pool_mpp,
                      pool_mpp_sp, pool_nfk)
from .pyramid import ScalePyramid, build_pyramid, extract_all, resize_bilinear, scale_edge
from .svm import LinearModel, predict, score, train_ovr
from .confmap import ConfidenceMap, build_map, export_map, patch_representation

__version__ = "0.1.0"
