from .supervisor import ExecutionResult, SandboxSupervisor, spawn_pool

__all__ = ["ExecutionResult", "SandboxSupervisor", "spawn_pool"]
