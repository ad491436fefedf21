"""storus: stochastically forced incompressible flow on the periodic torus.

A small laboratory for simulating the randomly forced Euler equations in
one and two dimensions and for auditing, term by term, the energy budget
identities the dynamics are expected to satisfy.  The pieces:

* ``fields``      spectral calculus on the unit torus
* ``mollifier``   smooth periodic averaging at a tunable length scale
* ``regularity``  Besov seminorms, Holder exponent fits, rough synthetic fields
* ``noise``       truncated cylindrical Wiener forcing and its admissibility checks
* ``euler``       constant-density stochastic integrator
* ``inhomo``      variable-density integrator with an elliptic pressure solve
* ``budget``      energy ledgers, commutator norms, convergence-rate fits
* ``cli``         command line entry points producing CSV, JSON and figures
"""

__version__ = "0.1.0"
