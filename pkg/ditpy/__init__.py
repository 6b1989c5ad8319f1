from ._schedule import *
from ._blocks import *
from ._policy import *
from ._space import *
from ._config import *
from ._training import *
from ._checkpoint import *
from . import envs
from . import evaluation
