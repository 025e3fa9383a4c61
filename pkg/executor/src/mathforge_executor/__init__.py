"""Real sandboxed Python executor for the mathforge wire protocol.

Runs agent code snippets in persistent per-session namespaces with an
import whitelist, per-call deadlines, and captured output streams.  Speaks
newline-delimited JSON over stdin/stdout; the only coupling to the engine
is that protocol.
"""

__version__ = "0.1.0"
