"""uavnav: toolchain for generating, validating, and evaluating aerial
vision-language navigation episodes at desk scale."""

__version__ = "0.1.0"
