"""lnrc: a codec laboratory for rate-distortion optimization driven by
linearized, smoothed and ensembled no-reference quality metrics."""

from .analysis import (MdsEmbedding, ScoreTable, bd_rate, bd_rate_points,
                       cluster, dissimilarity, mds_embed, spearman,
                       spearman_matrix)
from .blockcodec import (Bitstream, MacroblockDecision, QpParams, code_block,
                         dct2, decode, decode_block, delta_of_qp, dequantize,
                         idct2, quantize, reconstruct_block)
from .errors import (DegenerateMetricError, FormatError, LnrcError,
                     NonOverlappingCurvesError, UsageError, ValidationError)
from .image import (BlockView, GradientField, Image, iter_blocks, load_image,
                    pad_planes, psnr, save_image, sse, synth_ugc)
from .metrics import (MetricEnsembleSpec, MetricEvaluation, ensemble_grad,
                      evaluate, grad, load_ngf, resolve_metric, save_ngf,
                      score)
from .overfit import (LatentPyramid, OverfitConfig, OverfitResult,
                      calibrate_tau_warmup, make_pyramid, objective_grad,
                      rate_proxy, synthesize, train)
from .rdo import (RdoConfig, RdPoint, block_cost, calibrate_tau_hybrid,
                  combined_gradient, lambda_of_qp, rdo_encode, sweep)
from .report import emit_report
from .smoothing import SmoothingConfig, gaussian_field, smooth_grad, smooth_score

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
