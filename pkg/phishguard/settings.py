# flake8: noqa
from phishguard.settings_shared import *

try:
    from phishguard.local_settings import *
except ImportError:
    pass
