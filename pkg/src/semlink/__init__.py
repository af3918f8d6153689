"""Training-free generative joint source-channel coding over simulated AWGN
channels, with mirrored transmitter/receiver semantic caches."""

from .cache import (GAMMA_A, GAMMA_B, CacheEntry, ReductionResult, RestoreResult,
                    SemanticCache, StoreOutcome, cache_restore, load_thresholds)
from .cached_pipeline import (TwoStageConfig, cached_forward,
                              straight_through_objective,
                              straight_through_objective_fn, transmit_cached,
                              two_stage_invert)
from .channel import (ChannelConfig, ComplexSignal, IndexLinkConfig, awgn,
                      channel_forward, from_complex, index_bits,
                      index_link_transmit, index_symbol_cost, power_normalize,
                      snr_to_sigma2, to_complex)
from .errors import (ConfigurationError, ContractViolationError,
                     DegenerateSignalError, DivergenceError, NumericalError)
from .generator import (GeneratorModel, LatentCode, build_toy_generator,
                        generate, generate_vjp, grid_masks)
from .harness import (ExperimentConfig, SequenceReport, SourceSpec, SourceStream,
                      build_config, emit_report, generate_source_stream,
                      run_sequence, run_sequence_with_state)
from .inversion import (InversionConfig, TransmissionRecord,
                        channel_aware_invert, channel_aware_objective,
                        compression_ratio, metric_report, mse_objective,
                        plain_invert, transmit_image, transmit_latent)
from .objective import (LossConfig, PerceptualExtractor, combined_loss,
                        cosine_similarity, l1_loss, ms_ssim, perceptual_proxy,
                        psnr, task_loss)
from .optim import (DifferentiableObjective, OptimizerState, adam_step,
                    finite_diff_grad, gradient_max_rel_error, init_adam)
from .rng import RngStream, seeded_rng

__version__ = "0.1.0"
