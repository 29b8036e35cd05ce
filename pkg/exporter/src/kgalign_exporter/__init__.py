"""Embedding TSV exporter for the alignment toolkit.

Encodes entity names and exported walk sentences with a pretrained
multilingual sentence encoder and writes them in the embedding TSV format
the alignment pipeline consumes. Communicates with the pipeline through
files only.
"""

__version__ = "0.1.0"
