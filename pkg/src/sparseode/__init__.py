"""sparseode: learning sparse polynomial and rational ODE systems from
multi-environment time course data."""

from .fields import (
    MassActionField,
    PowerLawField,
    RationalLawField,
    RationalMassActionField,
    StoichiometrySpec,
    apply_environment,
    search_space,
)

__version__ = "0.1.0"
