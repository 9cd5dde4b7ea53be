"""2D transcranial ultrasound tomography engine.

Pipeline: procedural brain phantoms -> full/partial transducer
acquisitions -> finite-difference wave simulation -> time-reversal
migration fragments -> stacking / full-waveform inversion -> metrics,
with JSON-manifested tensor datasets feeding the learned fusion stage.
"""

from .acquisition import (
    AcquisitionGeometry,
    Element,
    GeometryError,
    Shot,
    contour_length_m,
    full_contour_geometry,
    partial_arc_geometry,
    ring_geometry,
)
from .augment import PerturbationSpec, add_noise, perturb_fragments, subsample_fragments
from .imaging import (
    FragmentSet,
    TraFragment,
    aperture_interior_mask,
    boundary_reference,
    migrate_survey,
    normalize_fragment,
    stack_fragments,
    tra_image,
)
from .inversion import FwiConfig, FwiResult, GradientField, fwi_gradient, fwi_invert, misfit
from .metrics import MetricReport, normalize01, rmse, ssim
from .phantom import (
    DEFAULT_VELOCITIES,
    PhantomError,
    PhantomSpec,
    Tissue,
    TissueMap,
    VelocityModel,
    build_slice_phantom,
    homogeneous_interior,
    nominal_background,
    rasterize,
    smooth_model,
    smoothed_interior,
    velocity_table,
)
from .solver import (
    ChannelData,
    InstabilityError,
    SolverConfig,
    SolverError,
    SourceWavelet,
    StabilityError,
    Wavefield,
    backpropagate,
    check_stability,
    first_arrival_time,
    forward_simulate,
    ricker,
    simulate_survey,
)
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"
