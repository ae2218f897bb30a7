"""3T-to-7T T1-weighted brain MRI super-resolution toolkit."""

__version__ = "0.1.0"

from . import inference, losses, metrics, nifti, stats, training, volumes  # noqa: F401
from .nets import ConditionalUNet, DiscriminatorConfig, ModelConfig, PatchDiscriminator  # noqa: F401
