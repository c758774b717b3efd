"""Semiring dynamic programming over CTC and RNN-T alignment lattices."""

from .ctc import (CtcLattice, FrameLogProbs, LabelSequence, build_ctc_lattice, ctc_alignment_count,
                  ctc_alignment_entropy, ctc_compute, ctc_kl_seq, ctc_nll, ctc_nll_gradient,
                  ctc_state_posteriors)
from .engine import (AlignmentProblem, ComputeResult, GradientTable, Lattice, OpCount, backward,
                     compute, gradient, linear_gradients)
from .errors import (DomainError, InfeasibleAlignmentError, LatticeStructureError,
                     SemiringUsageError, UnsupportedError)
from .losses import (LossConfig, LossReport, entropy_regularized_loss, kl_state, nll_loss,
                     semiring_distillation_loss, sequence_distillation_loss, soft_distillation_loss)
from .rnnt import (RnntGridLogProbs, RnntLattice, build_rnnt_lattice, num_alignments,
                   rnnt_alignment_entropy, rnnt_compute, rnnt_kl_seq, rnnt_nll, rnnt_nll_gradient,
                   rnnt_vertex_posteriors, wavefront_schedule)
from .semirings import Semiring, SemiringId, all_semirings, get_semiring, xlogx_log

__version__ = "0.1.0"
