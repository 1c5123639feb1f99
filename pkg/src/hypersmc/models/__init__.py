"""Model layer: NEF identities, the toy waveform model and the CLG source model."""

from .nef import (NefDescriptor, gaussian_nef, gaussian_power, gaussian_power_log_constant,
                  nef_power_constant, theta_of_alpha)
from .toy import ToyModel, generate_toy_data, toy_log_likelihood
from .clg import (ClgModel, SourceConfig, VoxelGrid, clg_conditional_posterior,
                  clg_config_loglik, clg_joint_gaussian, clg_marginal_loglik,
                  defective_sequence_logconstant, generate_clg_data, naive_power_logconstant,
                  prior_logdensity_source, rb_tempered_logdensity, synthetic_lead_field)
