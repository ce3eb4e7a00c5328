"""flowquery: natural-language search over streamline flow patterns.

Pipeline: synthetic or ingested vector fields -> RK4 streamlines ->
hierarchical segments -> arc-length-normalized distance matrices ->
denoising-autoencoder latents -> cross-modal matcher -> top-k text queries,
served over HTTP for the browser explorer.
"""

__version__ = "0.1.0"

from .errors import (BadParam, BadResponse, BindError, ConfigError,
                     DegenerateSegment, EmptyIndex, EmptyQuery,
                     FlowQueryError, FormatError, IoError, OutOfDomain,
                     ServiceUnavailable, ShapeMismatch, Timeout)
from .field import (CriticalPointSpec, VectorField, gen_synthetic,
                    interpolate, interpolate_many, load_raw, save_raw)
from .trace import (Streamline, TraceConfig, load_streamlines,
                    save_streamlines, seed_uniform, trace, trace_many)
from .descriptor import (SamplingConfig, Segment, batch_distance_matrices,
                         distance_matrix, read_dm, resample, sample_segments,
                         segment_descriptor, write_dm)
from .encoder import (DaeModel, FlowLatent, NoiseSchedule, TrainConfig,
                      corrupt, encode, load_checkpoint, make_schedule,
                      metrics, reconstruct, save_checkpoint, train_dae)
from .evalsuite import (LabeledFeatureSet, linear_probe, timing_scaling,
                        uniformity)
from .matcher import (MatcherConfig, MatcherModel, MatchIndex, MatchResult,
                      TextEmbedding, build_index, cross_attention,
                      embed_text_fallback, infonce_loss, load_index,
                      load_matcher, query, save_index, save_matcher,
                      train_matcher)
from .llmbridge import (ChatClientConfig, ChatTurn, TagConcept, chat,
                        extract_tags, gen_instruction_data, merge_tags,
                        render_views)
from .server import ServiceConfig, SessionState, create_app, serve
