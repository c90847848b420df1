from .ienet import IENet, IENetConfig
from .ifnet import IFNet, IFNetConfig

__all__ = ["IENet", "IENetConfig", "IFNet", "IFNetConfig"]
