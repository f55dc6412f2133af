from textkit.core import pipeline
