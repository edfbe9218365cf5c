"""netinvert: invert a trained convolutional classifier with a conditioned generator.

A frozen classifier is inverted by training a generator to reproduce the
classifier's input-space distribution per class, driven by a combined
KL + cross-entropy + cosine-diversity objective. Diagnostics (sample grids,
t-SNE feature maps, decision-boundary maps) make the classifier's decision
process inspectable.
"""

from .classifier import (ClassifierConfig, ConvClassifier, build_classifier,
                         classifier_from_checkpoint, evaluate, forward_with_features,
                         train_classifier)
from .conditioning import (ConditioningBatch, embed_labels, one_hot_vectors,
                           project_conditioning, sample_conditioning, sample_soft_vectors)
from .data_io import (Checkpoint, LabeledDataset, load_checkpoint, load_mnist,
                      parameter_checksum, save_checkpoint)
from .generator import Generator, GeneratorConfig, build_generator, generate, \
    generator_from_checkpoint
from .inversion import (InversionMetrics, LossWeights, ce_loss, combined_loss,
                        cosine_diversity_loss, inversion_accuracy, kl_loss,
                        train_generator)

__version__ = "0.1.0"
