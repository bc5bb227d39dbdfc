"""
Adam optimizer state and update step
"""
import torch

from src.shared.constants import ADAM_DEFAULTS
from src.shared.exceptions import ShapeMismatch


class AdamState:
    """
    Per-parameter first/second moments and the step counter, backed by
    ``torch.optim.Adam`` (bias-corrected, no weight decay)
    """

    def __init__(self, params, lr, beta1=ADAM_DEFAULTS['BETA1'], beta2=ADAM_DEFAULTS['BETA2'],
                 eps_stab=ADAM_DEFAULTS['EPS']):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_stab = eps_stab
        self.optimizer = torch.optim.Adam(
            self.params, lr=lr, betas=(beta1, beta2), eps=eps_stab, foreach=False
        )

    @property
    def t(self):
        if not self.params:
            return 0
        state = self.optimizer.state.get(self.params[0], {})
        step = state.get('step', 0)
        return int(step.item() if torch.is_tensor(step) else step)

    def moments(self, param):
        """(m, v) for a parameter, zeros before the first step"""
        state = self.optimizer.state.get(param, {})
        if 'exp_avg' not in state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state['exp_avg'], state['exp_avg_sq']

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=True)

    def step(self):
        """Apply one update from the gradients already accumulated on params"""
        self.optimizer.step()


def adam_update(params, grads, state):
    """
    One bias-corrected Adam step with explicit gradients.

    Parameters are updated in place; the state's step counter advances by one.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.params):
        raise ShapeMismatch('params, grads and state must align')
    for param, grad, tracked in zip(params, grads, state.params):
        if param is not tracked:
            raise ShapeMismatch('params do not match the optimizer state')
        if grad.shape != param.shape:
            raise ShapeMismatch(
                f"Gradient shape {tuple(grad.shape)} does not match parameter {tuple(param.shape)}"
            )
        param.grad = grad.detach().clone().to(param.dtype)
    state.step()
    return params, state
