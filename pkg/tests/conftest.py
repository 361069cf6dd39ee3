import pytest
from hypothesis import HealthCheck, settings

from inpatient_map.agents import build_pathway
from inpatient_map.backends import HashEmbedding, ScriptedChat
from inpatient_map.config import RunConfig
from inpatient_map.retrieval import index_documents
from inpatient_map.synthetic import make_knowledge_base, make_scripted_corpus

settings.register_profile("ci", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def embedder():
    return HashEmbedding(256, 0)


@pytest.fixture(scope="session")
def corpus():
    return make_scripted_corpus(50, seed=0)


@pytest.fixture(scope="session")
def kb_index(embedder):
    return index_documents(make_knowledge_base(), embedder)


@pytest.fixture
def make_pathway(corpus, kb_index, embedder):
    """Build a pathway over the scripted corpus, optionally with modules disabled."""

    def _make(disable=(), config=None, index=kb_index, agent_spec=None, chief_spec=None):
        cfg = (config or RunConfig()).disable(disable)
        return build_pathway(cfg, index=index,
                             chat=ScriptedChat.from_spec(agent_spec or corpus.agent_spec),
                             chief_chat=ScriptedChat.from_spec(chief_spec or corpus.chief_spec),
                             embedder=embedder)

    return _make


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
