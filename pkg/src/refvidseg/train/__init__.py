from .losses import LossBreakdown, dice_loss, match_cost, reference_loss, sequence_dice_loss
from .loop import FitResult, fit, load_checkpoint, save_checkpoint, seed_everything
from .matcher import Assignment, build_cost_matrix, hungarian_match
from .schedule import lr_at
