import pytest
import torch

from sfg.config import ModelConfig


def tiny_config(**kw):
    base = dict(L=2, L_prime=4, K=2, T=2, widths=(8, 12), corr_width=12, decoder_max_width=12,
                peanet_widths=(6, 8, 10))
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


def randomize_heads(model, scale=0.05, seed=0):
    """Give zero-initialised heads small random weights so gradients reach every layer."""
    g = torch.Generator().manual_seed(seed)
    heads = list(model.cfunet.decoder.heads)
    if model.peanet is not None:
        heads.append(model.peanet.head)
    with torch.no_grad():
        for h in heads:
            h.weight.copy_(scale * torch.randn(h.weight.shape, generator=g, dtype=h.weight.dtype))
            h.bias.copy_(scale * torch.randn(h.bias.shape, generator=g, dtype=h.bias.dtype))


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary is printed at the end of the run."""
    def record(name, ok, detail):
        ACCEPTANCE.append((name, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in ACCEPTANCE:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
