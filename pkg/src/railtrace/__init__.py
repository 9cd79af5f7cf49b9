"""railtrace: reconstruct freight rail routes from geotagged sightings."""

__version__ = "0.1.0"
