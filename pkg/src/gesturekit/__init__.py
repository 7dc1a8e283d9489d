"""Speech-driven 3D conversational gesture synthesis toolkit.

Maps 28-dim MFCC speech features at 15 Hz to synchronized facial-expression
(64), body (42), and hand (126) parameter sequences with a shared-encoder /
three-decoder 1D convolutional generator, trained with a weighted regression
loss plus an audio-conditioned adversarial loss.
"""

from .annotations import (BodyParams, FaceParams, GestureSequence, HandParams,
                          TrainingWindow, confidence_filter, fill_gaps_cubic,
                          gaussian_smooth, generate_synthetic_corpus,
                          make_training_windows)
from .audio import (AudioConfig, AudioFeatureSequence, AudioSignal, FeatureFrame,
                    compute_deltas, compute_mfcc_frame, extract_features, load_wav,
                    normalize_signal)
from .autograd import Parameter, Tensor, adam_step, backward
from .errors import (CheckpointError, ConfigError, ContractError, DataError,
                     GestureKitError, ShapeError, StateError)
from .evaluation import (LipBlendshapeBasis, lip_error, lip_vertices,
                         random_baseline, sync_accuracy_report,
                         synthetic_lip_basis)
from .models import (DiscriminatorConfig, GeneratorConfig, ModelBundle,
                     discriminator_forward, generator_forward, load_checkpoint,
                     save_checkpoint, synthesize)
from .training import (LossWeights, TrainConfig, adversarial_losses,
                       regression_loss, train, train_step,
                       train_sync_classifier)

__version__ = "0.1.0"
