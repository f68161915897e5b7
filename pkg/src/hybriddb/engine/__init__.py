from .executor import QueryError, execute
from .metrics import CallRecord, MetricsSink
from .planner import Plan, PlanCosts, plan_query
from .server import Deployment, ProvisioningFailed, calibrate_switch, deploy
from .storage import Database, EncryptedTable, RowRejected
from .udf import DuplicateUdf, Udf, UdfRegistry, UnregisteredUdf

__all__ = [n for n in dir() if not n.startswith("_")]
