from ._ensemble import *
from ._metrics import *
from ._rollout import *
from ._baseline import *
from ._oracle import *
from ._report import *
from ._ablation import *
