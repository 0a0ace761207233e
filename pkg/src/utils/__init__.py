"""Utilities for the CFLHKD simulator"""

from utils.errors import (
    CflhkdError,
    ConfigError,
    DegenerateWeightsError,
    EmptyDataError,
)
from utils.log_utils import (
    setup_run_logging,
)
from utils.path_utils import (
    get_repo_root,
    default_output_dir,
)
