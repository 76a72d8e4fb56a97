"""
Pytest Configuration
"""
import pytest
import sys
from io import StringIO
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.models.schemas import SynthConfig, TrainingInstance  # noqa: E402
from app.services.corpus import parse_transcripts  # noqa: E402
from app.services.synthgen import generate  # noqa: E402


SAMPLE_TRANSCRIPT = """student_id,course_id,term,grade_letter,major,credits
s1,CS101,1,A,CS,4
s1,MA101,1,B,CS,3
s1,CS201,2,B+,CS,4
s1,MA201,2,A,CS,3
s1,CS301,3,A-,CS,4
s1,PE100,3,S,CS,1
s2,CS101,1,B,CS,4
s2,MA101,1,D+,CS,3
s2,MA101,2,C,CS,3
s2,CS201,2,A,CS,4
s2,CS301,4,B-,CS,4
"""


@pytest.fixture(scope="session")
def sample_transcript_text():
    """Fixture for a small hand-built transcript"""
    return SAMPLE_TRANSCRIPT


@pytest.fixture
def sample_histories():
    """Fixture for parsed sample histories"""
    return parse_transcripts(StringIO(SAMPLE_TRANSCRIPT))


@pytest.fixture
def make_instance():
    """Factory for training instances with sensible defaults"""

    def factory(context=("a",), good=(), bad=(), student="s", term=2, major="", level="freshman", **kwargs):
        return TrainingInstance(
            student=student,
            term=term,
            major=major,
            level=level,
            context=tuple(context),
            position=kwargs.pop("position", 2),
            good=frozenset(good),
            bad=frozenset(bad),
            **kwargs,
        )

    return factory


@pytest.fixture(scope="session")
def small_synth_config():
    """Fixture for a quick synthetic corpus configuration"""
    return SynthConfig(
        seed=3,
        majors=1,
        courses_per_major=30,
        students=150,
        terms_per_student=6,
        start_spread=3,
        load_min=3,
        load_max=5,
    )


@pytest.fixture(scope="session")
def small_corpus(small_synth_config):
    """Fixture for a generated corpus"""
    return generate(small_synth_config)
