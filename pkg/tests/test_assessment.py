import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parley.assessment import (
    DEGRADED_HOBBY,
    DEGRADED_LEVEL,
    DEGRADED_SUMMARY,
    InvalidLevel,
    MissingBlock,
    MissingKey,
    ProfileParseError,
    extract_profile,
    parse_profile_block,
    profile_to_block,
    run_assessment_turn,
    strip_speaker_prefix,
)
from parley.core import (
    CefrLevel,
    Phase,
    PhaseTrigger,
    SessionConfig,
    Speaker,
    UserProfile,
    Utterance,
    advance_phase,
    append_utterance,
    new_session_state,
)

from fakes import FnGateway, ScenarioBrain

VALID_BLOCK = (
    "[[PROFILE]]\n"
    "NAME: Alice\n"
    "HOBBY: music\n"
    "LEVEL: A2\n"
    "SUMMARY: Simple sentences; tense errors.\n"
    "[[/PROFILE]]"
)

# The malformed corpus: every entry must produce a typed parse error.
MALFORMED_CORPUS = [
    "",
    "no block here",
    "[[PROFILE]] NAME: A",  # never closed
    "[[PROFILE]]\nHOBBY: x\nLEVEL: A1\nSUMMARY: y\n[[/PROFILE]]",  # no NAME
    "[[PROFILE]]\nNAME: A\nLEVEL: A1\nSUMMARY: y\n[[/PROFILE]]",  # no HOBBY
    "[[PROFILE]]\nNAME: A\nHOBBY: x\nSUMMARY: y\n[[/PROFILE]]",  # no LEVEL
    "[[PROFILE]]\nNAME: A\nHOBBY: x\nLEVEL: A1\n[[/PROFILE]]",  # no SUMMARY
    "[[PROFILE]]\nNAME: A\nHOBBY: x\nLEVEL: Z9\nSUMMARY: y\n[[/PROFILE]]",
    "[[PROFILE]]\nNAME: A\nHOBBY: x\nLEVEL: A2/B1\nSUMMARY: y\n[[/PROFILE]]",
    "NAME: A\nHOBBY: x\nLEVEL: A1\nSUMMARY: y",  # markers absent entirely
]


class TestParseProfileBlock:
    def test_valid_block(self):
        profile = parse_profile_block(VALID_BLOCK, "Learner")
        assert profile == UserProfile("Alice", "music", CefrLevel.A2, "Simple sentences; tense errors.")

    def test_missing_block(self):
        with pytest.raises(MissingBlock):
            parse_profile_block("no block here", "Learner")

    def test_invalid_level(self):
        bad = VALID_BLOCK.replace("LEVEL: A2", "LEVEL: Z9")
        with pytest.raises(InvalidLevel) as err:
            parse_profile_block(bad, "Learner")
        assert err.value.value == "Z9"

    def test_missing_key(self):
        bad = VALID_BLOCK.replace("HOBBY: music\n", "")
        with pytest.raises(MissingKey) as err:
            parse_profile_block(bad, "Learner")
        assert err.value.key == "HOBBY"

    def test_trailing_chatter_ignored(self):
        text = VALID_BLOCK + "\n\nHope that helps! Let me know if you need anything."
        profile = parse_profile_block(text, "Learner")
        assert profile.level is CefrLevel.A2

    def test_leading_chatter_ignored(self):
        assert parse_profile_block("Sure!\n" + VALID_BLOCK, "Learner").name == "Alice"

    def test_lowercase_level_accepted(self):
        profile = parse_profile_block(VALID_BLOCK.replace("LEVEL: A2", "LEVEL: b1"), "Learner")
        assert profile.level is CefrLevel.B1

    def test_empty_name_falls_back(self):
        profile = parse_profile_block(VALID_BLOCK.replace("NAME: Alice", "NAME:"), "Learner")
        assert profile.name == "Learner"

    @pytest.mark.parametrize("text", MALFORMED_CORPUS)
    def test_malformed_corpus_yields_typed_errors(self, text):
        with pytest.raises(ProfileParseError):
            parse_profile_block(text, "Learner")

    @pytest.mark.parametrize("level", list(CefrLevel))
    def test_round_trip_all_levels(self, level):
        profile = UserProfile("Kai", "chess", level, "Strong reader; hesitant speaker.")
        assert parse_profile_block(profile_to_block(profile), "Learner") == profile

    @settings(max_examples=500, deadline=None)
    @given(st.binary(max_size=200))
    def test_fuzz_never_crashes(self, blob):
        text = blob.decode("utf-8", errors="replace")
        try:
            profile = parse_profile_block(text, "Learner")
        except ProfileParseError:
            return
        assert isinstance(profile, UserProfile)


class TestStripSpeakerPrefix:
    def test_strips_matching_prefix(self):
        assert strip_speaker_prefix("Marta: Hola!", "Marta") == ("Hola!", True)

    def test_case_insensitive(self):
        assert strip_speaker_prefix("marta:  hi", "Marta") == ("hi", True)

    def test_no_prefix(self):
        assert strip_speaker_prefix("just text", "Marta") == ("just text", False)


def gtk_state(**overrides):
    state = new_session_state("s1", SessionConfig(**overrides))
    advance_phase(state, PhaseTrigger.SESSION_STARTED)
    return state


class TestRunAssessmentTurn:
    def test_termination_phrase_detected(self):
        state = gtk_state()
        gateway = FnGateway(
            lambda req: "The assessment is finished, thank you, now we can start practicing. Marta and Omar will help you!"
        )
        utterance, terminated = run_assessment_turn(state, gateway)
        assert terminated
        assert utterance.speaker == Speaker.agent("Tutor")

    def test_case_insensitive_substring(self):
        state = gtk_state()
        gateway = FnGateway(lambda req: "ok... THE ASSESSMENT IS FINISHED, thanks")
        _, terminated = run_assessment_turn(state, gateway)
        assert terminated

    def test_turn_cap_terminates_regardless_of_text(self):
        state = gtk_state(assessment_turn_cap=3)
        for seq, speaker in ((1, Speaker.agent("Tutor")), (2, Speaker.user())):
            append_utterance(
                state,
                Utterance(seq=seq, speaker=speaker, text="x?", phase=Phase.GETTING_TO_KNOW_YOU, ts_ms=0),
            )
        gateway = FnGateway(lambda req: "And what about your weekend?")
        _, terminated = run_assessment_turn(state, gateway)
        assert terminated  # 3rd utterance reaches the cap

    def test_multiple_questions_warned(self):
        state = gtk_state()
        gateway = FnGateway(lambda req: "What's your name? And your hobbies?")
        run_assessment_turn(state, gateway)
        warnings = [e for e in state.events if e.type == "validation_warning"]
        assert any(e.payload["code"] == "MultipleQuestions" for e in warnings)

    def test_single_question_not_warned(self):
        state = gtk_state()
        gateway = FnGateway(lambda req: "What's your name?")
        run_assessment_turn(state, gateway)
        assert not [e for e in state.events if e.type == "validation_warning"]


def transcript():
    return [
        Utterance(1, Speaker.agent("Tutor"), "What's your name?", Phase.GETTING_TO_KNOW_YOU, 0),
        Utterance(2, Speaker.user(), "I am Alice, I like music", Phase.GETTING_TO_KNOW_YOU, 1000),
    ]


class TestExtractProfile:
    def test_well_formed_first_try(self):
        brain = ScenarioBrain(scripts={"profile": [VALID_BLOCK]})
        extraction = extract_profile(transcript(), brain, SessionConfig())
        assert extraction.profile.level is CefrLevel.A2
        assert not extraction.degraded
        assert extraction.attempts == 1

    def test_repair_retry_succeeds(self):
        brain = ScenarioBrain(scripts={"profile": ["garbage", VALID_BLOCK]})
        extraction = extract_profile(transcript(), brain, SessionConfig())
        assert extraction.profile.name == "Alice"
        assert not extraction.degraded
        assert extraction.attempts == 2

    def test_two_failures_degrade_to_defaults(self):
        brain = ScenarioBrain(scripts={"profile": ["nope", "still nope"]})
        warnings = []
        extraction = extract_profile(
            transcript(), brain, SessionConfig(), emit=lambda t, p: warnings.append((t, p))
        )
        assert extraction.degraded
        assert extraction.profile == UserProfile(
            "Learner", DEGRADED_HOBBY, DEGRADED_LEVEL, DEGRADED_SUMMARY
        )
        assert extraction.profile.level is CefrLevel.A2
        assert [t for t, _ in warnings].count("validation_warning") == 2

    def test_trailing_text_warns_but_parses(self):
        brain = ScenarioBrain(scripts={"profile": [VALID_BLOCK + "\nanything else you need?"]})
        warnings = []
        extraction = extract_profile(
            transcript(), brain, SessionConfig(), emit=lambda t, p: warnings.append((t, p))
        )
        assert not extraction.degraded
        assert any(p.get("code") == "profile_trailing_text" for _, p in warnings)

    def test_empty_transcript_rejected(self):
        with pytest.raises(ValueError):
            extract_profile([], FnGateway(lambda r: VALID_BLOCK), SessionConfig())
