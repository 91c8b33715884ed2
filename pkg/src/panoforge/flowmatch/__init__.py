"""Rectified flow matching with multi-input conditioning at toy scale."""
from .core import (TAGS, Assembly, FlowState, LatentGrid, TaskSpec, TimestepSchedule, TokenBatch,
                   assemble_tokens, completion_task, guided_perception_task, interpolate,
                   n_routes_for, perception_task, velocity_target)
from .lora import LoRALayer, lora_forward
from .models import (ConstantVelocity, LinearDecay, LinearVelocity, ShiftConvVelocity,
                     TimeLinearVelocity, TinyMLP, TrainableModel, VelocityModel)
from .train import (AdamW, TrainResult, TrainSettings, euler_integrate, fm_loss, fm_loss_and_grad,
                    gaussian_shift_dataset, train_toy, transport_error)
from .checkpoint import load_checkpoint, load_lora, merge_lora, save_checkpoint, save_lora
