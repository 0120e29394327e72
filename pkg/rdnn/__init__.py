"""rdnn: discover ODE right-hand sides with recursive residual networks."""

from typing import Any, Callable, Dict, Optional, TypeVar

__version__ = "0.1.0"

T = TypeVar("T")


class SystemRegistry:
    """Registry of benchmark system factories, keyed by name."""

    _registry: Dict[str, Callable[[], Any]] = {}

    @classmethod
    def register(cls, name: str) -> Callable[[Callable[[], T]], Callable[[], T]]:
        """Register a zero-argument factory building the named system."""
        def decorator(factory: Callable[[], T]) -> Callable[[], T]:
            cls._registry[name] = factory
            return factory
        return decorator

    @classmethod
    def get_factory(cls, name: str) -> Optional[Callable[[], Any]]:
        """Get the factory registered for ``name``."""
        return cls._registry.get(name)

    @classmethod
    def names(cls) -> list[str]:
        return sorted(cls._registry)
