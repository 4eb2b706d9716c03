"""Text-to-SQL data synthesis: web tables to databases, SQL, questions and chain-of-thought solutions."""

__version__ = "0.1.0"
