"""shrouddb: an oblivious, volume-hiding encrypted database.

Records live encrypted on an untrusted key-value server. Access
patterns are hidden by a tree-based ORAM; how many records a query
touches is hidden by padding the fetch count with a differentially
private sanitizer. A benchmark harness drives seeded, reproducible
experiments against in-memory, on-disk, or remote TCP storage.
"""

__version__ = "0.1.0"
