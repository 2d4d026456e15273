"""
Tests for model response parsing

Covers:
- Clean responses in both dialects
- Repair of prose-wrapped objects and near-miss values
- Strict mode rejecting every deviation
- Adversarial inputs: braces in strings, decoys, deep nesting, empty text
- A corpus of malformed responses rejected with and without repair
"""
import pytest

from src.ledger_audit.core.verdict_parser import (
    END_OF_ANALYSIS,
    RAW_EXCERPT_CHARS,
    iter_balanced_objects,
    parse_verdict,
)
from src.ledger_audit.exceptions import ParseFailure
from src.ledger_audit.models.prompt import Dialect
from src.ledger_audit.models.verdict import ParseStatus

VANILLA = Dialect.VANILLA
SYNTHETIC = Dialect.SYNTHETIC


# Malformed responses that must never yield a verdict
ADVERSARIAL_RESPONSES = (
    "",
    "   ",
    "\n\t\n",
    "\x00\x01\x02",
    "null",
    "true",
    "1",
    "0",
    '"1"',
    "[1, 0]",
    "{}",
    "anomaly: 1",
    "anomaly=1; explanation=late posting",
    "The entry is anomalous.",
    '{"anomaly": 2}',
    '{"anomaly": -1}',
    '{"anomaly": 10}',
    '{"anomaly": 0.5}',
    '{"anomaly": 1.5}',
    '{"anomaly": 1e3}',
    '{"anomaly": NaN}',
    '{"anomaly": Infinity}',
    '{"anomaly": null}',
    '{"anomaly": ""}',
    '{"anomaly": " "}',
    '{"anomaly": "yes"}',
    '{"anomaly": "true"}',
    '{"anomaly": "anomalous"}',
    '{"anomaly": "01"}',
    '{"anomaly": "1.0"}',
    '{"anomaly": "0x1"}',
    '{"anomaly": [1]}',
    '{"anomaly": [0, 1]}',
    '{"anomaly": {"value": 1}}',
    '{"anomaly": 1, "anomaly": 2}',
    '{"Anomaly": 1}',
    '{"anomalous": 1}',
    '{"is_anomaly": 1}',
    '{"verdict": 1, "explanation": "x"}',
    '{"explanation": "no verdict given"}',
    '{"explanation": "{\\"anomaly\\": 1}"}',
    '{"result": {"anomaly": 1}}',
    'Answer: {"score": 0.9} and {"label": "fraud"}',
    '{"anomaly": 2} {"anomaly": 3}',
    'prefix {"anomaly": -0.5} suffix',
    '{"anomaly" 1}',
    '{"anomaly": 1 "explanation": "x"}',
    "{'anomaly': 1}",
    "{anomaly: 1}",
    '{“anomaly”: 1}',
    '{"anomaly": True}',
    '{"anomaly": +1}',
    '{"anomaly": 01}',
    '{"anomaly": .5}',
    '{"anomaly": 1/1}',
    '{"anomaly": 1,}',
    '{"anomaly": 1, "explanation": "x",}',
    '```json\n{"anomaly": 1,}\n```',
    '```\n{"anomaly": maybe}\n```',
    '{"anomaly": 1',
    '"anomaly": 1}',
    '{{"anomaly": 1}}',
    '{"anomaly": false,',
    '{"anomaly": 1' + END_OF_ANALYSIS,
    "{" * 5000 + "}" * 5000,
)


# ============== Clean Tests ==============

class TestClean:
    """Test well-formed responses"""

    def test_vanilla_object(self):
        """Test a bare verdict object"""
        verdict = parse_verdict('{"anomaly": 1, "explanation": "weekend cash"}', VANILLA)
        assert verdict.anomaly == 1
        assert verdict.explanation == "weekend cash"
        assert verdict.confidence is None
        assert verdict.parse_status is ParseStatus.CLEAN

    def test_surrounding_whitespace(self):
        """Test leading and trailing whitespace is not a repair"""
        verdict = parse_verdict('\n  {"anomaly": 0, "explanation": ""}  \n', VANILLA)
        assert verdict.parse_status is ParseStatus.CLEAN

    def test_synthetic_with_terminator(self):
        """Test the end-of-analysis terminator is stripped"""
        raw = '{"anomaly": 1, "confidence": 0.85, "explanation": "3 flags"}' + END_OF_ANALYSIS
        verdict = parse_verdict(raw, SYNTHETIC, repair=False)
        assert verdict.anomaly == 1
        assert verdict.confidence == 0.85
        assert verdict.parse_status is ParseStatus.CLEAN

    def test_synthetic_without_terminator(self):
        """Test the terminator is optional"""
        verdict = parse_verdict('{"anomaly": 0, "explanation": "none"}', SYNTHETIC)
        assert verdict.parse_status is ParseStatus.CLEAN

    def test_vanilla_ignores_confidence(self):
        """Test confidence is only read in the synthetic dialect"""
        verdict = parse_verdict(
            '{"anomaly": 0, "confidence": 0.4, "explanation": "ok"}', VANILLA
        )
        assert verdict.confidence is None
        assert verdict.parse_status is ParseStatus.CLEAN


# ============== Repair Tests ==============

class TestRepair:
    """Test the repair pass"""

    @pytest.mark.parametrize(
        "raw,anomaly",
        [
            ('Here is my answer: {"anomaly": 1, "explanation": "x"} Thanks.', 1),
            ('```json\n{"anomaly": 0, "explanation": "x"}\n```', 0),
            ('{"anomaly": true, "explanation": "x"}', 1),
            ('{"anomaly": false, "explanation": "x"}', 0),
            ('{"anomaly": "1", "explanation": "x"}', 1),
            ('{"anomaly": " 0 ", "explanation": "x"}', 0),
            ('{"anomaly": 1.0, "explanation": "x"}', 1),
            ('{"anomaly": 1}', 1),
            ('{"anomaly": 0, "explanation": ["a", "b"]}', 0),
        ],
    )
    def test_repaired(self, raw, anomaly):
        """Test near-miss responses are recovered and marked"""
        verdict = parse_verdict(raw, VANILLA)
        assert verdict.anomaly == anomaly
        assert verdict.parse_status is ParseStatus.REPAIRED

    @pytest.mark.parametrize(
        "raw",
        [
            'Here is my answer: {"anomaly": 1, "explanation": "x"}',
            '{"anomaly": true, "explanation": "x"}',
            '{"anomaly": "1", "explanation": "x"}',
            '{"anomaly": 1}',
        ],
    )
    def test_strict_rejects(self, raw):
        """Test strict mode fails wherever repair would act"""
        with pytest.raises(ParseFailure):
            parse_verdict(raw, VANILLA, repair=False)

    def test_missing_explanation_is_empty(self):
        """Test a missing explanation becomes the empty string"""
        assert parse_verdict('{"anomaly": 1}', VANILLA).explanation == ""

    def test_non_string_explanation_serialized(self):
        """Test structured explanations are kept as JSON text"""
        verdict = parse_verdict('{"anomaly": 1, "explanation": {"why": "late"}}', VANILLA)
        assert verdict.explanation == '{"why": "late"}'

    def test_confidence_out_of_range_dropped(self):
        """Test an invalid confidence is dropped and marked"""
        raw = '{"anomaly": 1, "confidence": 1.5, "explanation": "x"}' + END_OF_ANALYSIS
        verdict = parse_verdict(raw, SYNTHETIC)
        assert verdict.confidence is None
        assert verdict.parse_status is ParseStatus.REPAIRED

    def test_skips_decoy_objects(self):
        """Test the first object with an anomaly key wins"""
        raw = 'Context {"score": 0.9} then verdict {"anomaly": 1, "explanation": "x"}'
        assert parse_verdict(raw, VANILLA).anomaly == 1

    def test_braces_inside_strings(self):
        """Test braces in JSON strings do not break extraction"""
        raw = 'Answer: {"explanation": "memo says } and {", "anomaly": 0} done'
        verdict = parse_verdict(raw, VANILLA)
        assert verdict.anomaly == 0
        assert verdict.explanation == "memo says } and {"

    def test_terminator_then_prose(self):
        """Test prose after the object still parses with repair"""
        raw = '{"anomaly": 1, "explanation": "x"}' + END_OF_ANALYSIS + " extra"
        verdict = parse_verdict(raw, SYNTHETIC)
        assert verdict.anomaly == 1
        assert verdict.parse_status is ParseStatus.REPAIRED


# ============== Failure Tests ==============

class TestFailures:
    """Test responses without a usable verdict"""

    @pytest.mark.parametrize(
        "raw",
        [
            "",
            "   ",
            "I think this entry is anomalous.",
            "[1, 0]",
            '{"anomaly": 2, "explanation": "x"}',
            '{"anomaly": -1}',
            '{"anomaly": null}',
            '{"result": {"anomaly": 1}}',
            '{"verdict": "anomaly"}',
            '{"anomaly": 1',
            "[" * 100_000 + "]" * 100_000,
        ],
    )
    def test_unusable(self, raw):
        """Test ParseFailure for every unusable response"""
        with pytest.raises(ParseFailure):
            parse_verdict(raw, VANILLA)

    @pytest.mark.parametrize("repair", [True, False])
    @pytest.mark.parametrize("raw", ADVERSARIAL_RESPONSES)
    def test_adversarial_corpus(self, raw, repair):
        """Test no malformed response is accepted in either mode"""
        with pytest.raises(ParseFailure):
            parse_verdict(raw, VANILLA, repair=repair)

    def test_adversarial_corpus_size(self):
        """Test the malformed corpus holds at least 50 distinct responses"""
        assert len(set(ADVERSARIAL_RESPONSES)) >= 50

    def test_excerpt_truncated(self):
        """Test failures keep a bounded excerpt of the raw text"""
        raw = "no verdict " * 100
        with pytest.raises(ParseFailure) as exc_info:
            parse_verdict(raw, VANILLA)
        assert exc_info.value.raw == raw[:RAW_EXCERPT_CHARS]
        assert exc_info.value.reason


class TestBalancedObjects:
    """Test the brace scanner"""

    def test_yields_top_level_spans(self):
        """Test nested objects come out as one span"""
        spans = list(iter_balanced_objects('a {"x": {"y": 1}} b {"z": "}"} c'))
        assert spans == ['{"x": {"y": 1}}', '{"z": "}"}']

    def test_escaped_quotes(self):
        """Test escaped quotes keep the string open"""
        spans = list(iter_balanced_objects('{"a": "say \\"}\\" now"}'))
        assert spans == ['{"a": "say \\"}\\" now"}']

    def test_unbalanced(self):
        """Test an unclosed object yields nothing"""
        assert list(iter_balanced_objects('{"a": 1')) == []
