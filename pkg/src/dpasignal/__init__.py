"""Drug -> condition signal detection in longitudinal patient event data."""

from .counting import CountTables, UniformKernel, WeightKernel, count, merge
from .ensemble import BagConfig, EnsembleConfig, bag, bag_many, fuse, scale_adjust
from .evaluation import RankedList, average_precision, map_by_year
from .events import (
    Cohort, ConditionOccurrence, DrugEra, PatientRecord, TimeAxis, ValidationReport,
    first_eras_only, load_cohort, validate,
)
from .rating import RatingConfig, RatingMatrix, cumulate, expected_count, rate
from .synth import GenConfig, GroundTruth, generate, simulate, write_cohort

__version__ = "0.1.0"
