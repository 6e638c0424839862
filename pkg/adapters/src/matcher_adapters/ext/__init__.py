"""Mount point for optional inference extensions.

A module ``matcher_adapters.ext.<method>`` (dashes become underscores)
exposing ``run(image_a, image_b, weights, spec)`` makes that method's
real network available to the adapter CLI.  None ship with the package.
"""
