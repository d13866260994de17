"""Rule-based grading of model completions.

A completion is graded on two independent checks: whether its final boxed
answer is equivalent to the reference answer, and whether the completion
follows the think/answer output format. The scalar reward is

    2   answer correct and format correct
    1   answer correct, format violated
   -1   answer incorrect (regardless of format)

Answer equivalence is exact-rational, never float-tolerance: both sides
are normalized, parsed into ``fractions.Fraction`` where possible, and
compared exactly; unparseable values fall back to normalized
case-insensitive string comparison. The normalization pipeline is
versioned in the schema document (currently v1).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

REWARD_CORRECT = 2
REWARD_CORRECT_BAD_FORMAT = 1
REWARD_INCORRECT = -1


@dataclass(frozen=True)
class GradeResult:
    extracted_answer: str | None
    answer_correct: bool
    format_correct: bool
    reward: int

    def to_dict(self) -> dict:
        return {
            "extracted_answer": self.extracted_answer,
            "answer_correct": self.answer_correct,
            "format_correct": self.format_correct,
            "reward": self.reward,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "GradeResult":
        return cls(
            extracted_answer=record.get("extracted_answer"),
            answer_correct=bool(record.get("answer_correct")),
            format_correct=bool(record.get("format_correct")),
            reward=int(record.get("reward")),
        )


def extract_answer(completion: str) -> str | None:
    """Contents of the last balanced ``\\boxed{...}`` in the completion.

    Nested braces are allowed; a malformed final box falls back to the
    previous one. Returns None when no balanced box exists.
    """
    if not completion:
        return None
    starts = [m.start() for m in re.finditer(r"\\boxed", completion)]
    for start in reversed(starts):
        i = start + len("\\boxed")
        while i < len(completion) and completion[i].isspace():
            i += 1
        if i >= len(completion) or completion[i] != "{":
            continue
        depth = 0
        for j in range(i, len(completion)):
            ch = completion[j]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return completion[i + 1 : j].strip()
        # unbalanced; try an earlier occurrence
    return None


_THINK = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ANSWER = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


def check_format(completion: str) -> bool:
    """True iff a think block is followed by an answer block holding a box."""
    if not completion:
        return False
    think = _THINK.search(completion)
    if think is None:
        return False
    answer = _ANSWER.search(completion, think.end())
    if answer is None:
        return False
    return extract_answer(answer.group(1)) is not None


# Normalization pipeline v1 ------------------------------------------------

_MATH_DELIMS = (("$", "$"), (r"\(", r"\)"), (r"\[", r"\]"))
_SPACING = (r"\left", r"\right", r"\!", r"\,", r"\:", r"\;", "\\ ")
_TEXT_WRAPPER = re.compile(r"\\(?:text|textbf|textrm|mathrm|mathbf|mbox)\{([^{}]*)\}")
_THOUSANDS = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?$")


def normalize_answer(text: str) -> str:
    """Strip formatting wrappers only; never rewrites mathematical content."""
    s = text.strip()
    changed = True
    while changed and s:
        changed = False
        for open_d, close_d in _MATH_DELIMS:
            if s.startswith(open_d) and s.endswith(close_d) and len(s) > len(open_d) + len(close_d) - 1:
                s = s[len(open_d) : len(s) - len(close_d)].strip()
                changed = True
        if s.startswith("{") and s.endswith("}") and _balanced_wrap(s):
            s = s[1:-1].strip()
            changed = True
    for cmd in _SPACING:
        s = s.replace(cmd, "")
    while _TEXT_WRAPPER.search(s):
        s = _TEXT_WRAPPER.sub(r"\1", s)
    s = s.replace(r"\$", "").replace("$", "")
    s = s.replace(r"\%", "%")
    s = s.strip()
    if s.endswith("."):
        s = s[:-1].strip()
    return s


def _balanced_wrap(s: str) -> bool:
    # True when the leading "{" closes exactly at the final character.
    depth = 0
    for i, ch in enumerate(s):
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i == len(s) - 1
    return False


_FRAC = re.compile(r"^([+-]?)\\[dtc]?frac\s*(.+)$")


def parse_rational(text: str) -> Fraction | None:
    """Parse a normalized answer into an exact rational, or None.

    Accepts integers, decimals, simple scientific notation, ``a/b``,
    ``\\frac{a}{b}`` (nested allowed), percents, and thousands commas.
    """
    s = "".join(text.split())
    if not s:
        return None
    if s.endswith("%"):
        inner = parse_rational(s[:-1])
        return None if inner is None else inner / 100
    m = _FRAC.match(s)
    if m:
        sign = -1 if m.group(1) == "-" else 1
        parts = _split_frac_args(m.group(2))
        if parts is None:
            return None
        num, den = (parse_rational(p) for p in parts)
        if num is None or den is None or den == 0:
            return None
        return sign * num / den
    if _THOUSANDS.match(s):
        s = s.replace(",", "")
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None


def _split_frac_args(body: str) -> tuple[str, str] | None:
    """Split the two arguments of a frac: braced groups or bare digits."""
    args = []
    i = 0
    while i < len(body) and len(args) < 2:
        if body[i] == "{":
            depth = 0
            for j in range(i, len(body)):
                if body[j] == "{":
                    depth += 1
                elif body[j] == "}":
                    depth -= 1
                    if depth == 0:
                        args.append(body[i + 1 : j])
                        i = j + 1
                        break
            else:
                return None
        elif body[i].isdigit():
            args.append(body[i])
            i += 1
        else:
            return None
    if len(args) != 2 or i != len(body):
        return None
    return args[0], args[1]


def answers_equal(candidate: str, reference: str) -> bool:
    """Exact-value equivalence under normalization pipeline v1.

    Both sides parseable as rationals: exact Fraction comparison.
    Otherwise: normalized strings compared case-insensitively with
    whitespace removed. Prefixes like ``x=`` are deliberately not
    stripped; only formatting wrappers are.
    """
    if not reference or not reference.strip():
        raise ValueError("reference answer must be non-empty")
    if candidate is None:
        return False
    cand = normalize_answer(candidate)
    ref = normalize_answer(reference)
    cand_q = parse_rational(cand)
    ref_q = parse_rational(ref)
    if cand_q is not None and ref_q is not None:
        return cand_q == ref_q
    return "".join(cand.split()).casefold() == "".join(ref.split()).casefold()


def grade(completion: str, reference: str) -> GradeResult:
    """Grade one completion against the reference answer."""
    extracted = extract_answer(completion)
    answer_correct = extracted is not None and answers_equal(extracted, reference)
    format_correct = check_format(completion)
    if answer_correct:
        reward = REWARD_CORRECT if format_correct else REWARD_CORRECT_BAD_FORMAT
    else:
        reward = REWARD_INCORRECT
    return GradeResult(
        extracted_answer=extracted,
        answer_correct=answer_correct,
        format_correct=format_correct,
        reward=reward,
    )
