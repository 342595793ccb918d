"""Band-weighted Fourier losses for reconstructing grid-sampled velocity fields."""

from .fields import (
    Dataset,
    FieldFormatError,
    SyntheticConfig,
    gen_dataset,
    load_dataset,
    read_field,
    save_dataset,
    synth_field,
    write_field,
)
from .loss import (
    LossConfig,
    baseline_loss,
    baseline_loss_grad,
    fourier_loss,
    fourier_loss_grad,
    magnitude_loss,
    phase_loss,
    stl_weights,
    total_loss,
    total_loss_grad,
)
from .model import FluidGenerator, load_checkpoint, save_checkpoint
from .spectral import BandFilter, BandPartition, band_filter, band_l1, dft, idft, make_partition
from .diagnostics import band_mre, band_report, log_mag_histogram, relative_band_std

__version__ = "0.1.0"
