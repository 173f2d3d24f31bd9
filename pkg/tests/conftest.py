from __future__ import annotations

import pytest

from prefalign.datasets import QuestionnaireItem, ResponseOption
from prefalign.gateway import Gateway, GatewayConfig
from prefalign.stubllm import StubLlm


def make_item(context_id: str, k: int = 3, text: str | None = None) -> QuestionnaireItem:
    return QuestionnaireItem(
        context_id=context_id,
        context_text=text or f"context text for {context_id}",
        responses=tuple(
            ResponseOption(f"r{j}", f"response r{j} of {context_id}") for j in range(k)
        ),
    )


def stub_gateway(responder, **config_kwargs) -> Gateway:
    """Gateway wired to an in-process stub endpoint, no sleeping on retries."""
    stub = StubLlm(responder)
    config = GatewayConfig(
        base_url="http://stub.test", backoff_base=0.0, **config_kwargs
    )
    return Gateway(config, transport=stub.as_transport())


@pytest.fixture
def tiny_questionnaire() -> list[QuestionnaireItem]:
    return [make_item(f"c{i}", k=3) for i in range(4)]
