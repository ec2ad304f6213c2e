"""Energy-optimal docking of a servicer spacecraft onto a tumbling target.

Submodules
----------
quat           quaternion algebra (vector-first, scalar last)
dynamics       HCW translation, rigid-body attitude, docking residuals
integrator     linearly implicit DAE integrator and ZOH propagation
transcription  single-shooting NLP: decision vector, objective, constraints
nlp            dense SQP with damped BFGS and an active-set QP
scenario       scenario files, planning, verification and CSV export
cli            command line entry point
"""

__version__ = "0.1.0"
