from vrebench.api.app import Request, Response, VreApp
from vrebench.api.config import BadConfig, ServerConfig, load_config
from vrebench.api.routes import ROUTES, SEGMENTS, Route, build_route_table
from vrebench.api.server import AccessLog, PortInUse, ServiceHandle, format_access_line, serve

__all__ = [
    "ROUTES",
    "SEGMENTS",
    "AccessLog",
    "BadConfig",
    "PortInUse",
    "Request",
    "Response",
    "Route",
    "ServerConfig",
    "ServiceHandle",
    "VreApp",
    "build_route_table",
    "format_access_line",
    "load_config",
    "serve",
]
