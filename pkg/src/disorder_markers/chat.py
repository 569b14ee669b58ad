"""CHAT transcript parsing, utterance cleaning and disorder-label derivation."""

import re
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TextIO

from .labels import Cohort, DisorderLabel, Speaker


class ChatParseError(Exception):
    """Raised when a CHAT document cannot be parsed."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptySessionError(Exception):
    """Raised when a CHAT document has no participant tier."""

    pass


# Annotation codes and the disorder each one signals
CODE_DISORDERS: dict[str, DisorderLabel] = {
    "[+ gram]": DisorderLabel.AGRAMMATISM,
    "[/]": DisorderLabel.DISFLUENCY,
    "[//]": DisorderLabel.DISFLUENCY,
    "&+": DisorderLabel.DISFLUENCY,
    "+ es": DisorderLabel.ANOMIA,
    "+...": DisorderLabel.ANOMIA,
    "[+ cir]": DisorderLabel.ANOMIA,
    "[+ jar]": DisorderLabel.ANOMIA,
}

# Non-descriptive utterance; removes the utterance from the label space
EXCLUSION_CODE = "[+ exc]"

KNOWN_CODES = frozenset(CODE_DISORDERS) | {EXCLUSION_CODE}

# Rarest class first, so minority classes win multi-label collisions
DEFAULT_PRECEDENCE: tuple[DisorderLabel, ...] = (
    DisorderLabel.ANOMIA,
    DisorderLabel.AGRAMMATISM,
    DisorderLabel.DISFLUENCY,
)

PARTICIPANT_CODE = "PAR"

GROUP_TO_COHORT: dict[str, Cohort] = {
    "control": Cohort.HEALTHY,
    "healthy": Cohort.HEALTHY,
    "mci": Cohort.MCI,
    "probablead": Cohort.AD,
    "possiblead": Cohort.AD,
    "ad": Cohort.AD,
    "dementia": Cohort.AD,
}

COHORT_TO_GROUP: dict[Cohort, str] = {
    Cohort.HEALTHY: "Control",
    Cohort.MCI: "MCI",
    Cohort.AD: "ProbableAD",
}

VALID_CDR = (0.0, 0.5, 1.0, 2.0, 3.0)

# Order matters: a bracket group is consumed whole before its contents are seen.
_CODE_RX = re.compile(
    r"(?P<bracket>\[[^\]\[]*\])"
    r"|(?P<fragment>&\+)(?=\S)"
    r"|(?P<event>&=\S+)"
    r"|(?P<filler>&[-~*])(?=\S)"
    r"|(?P<empty>(?<!\S)\+\s?es\b)"
    r"|(?P<trailing>\+(?:\.\.\.|…))"
    r"|(?P<terminator>\+(?:\.\.\?|//?[.?]|\"/\.|\"\.|[\^<,+\"]|!\?))"
)
_BULLET_RX = re.compile("\x15[^\x15]*\x15")
_PAUSE_RX = re.compile(r"\(\.{1,3}\)")
_SUFFIX_RX = re.compile(r"(?<=\w)@[\w:]+")
_SPACE_BEFORE_PUNCT_RX = re.compile(r"\s+(?=[.,?!])")
_WHITESPACE_RX = re.compile(r"\s+")
_TIER_RX = re.compile(r"^\*(?P<speaker>[A-Za-z0-9]+):\s*(?P<content>.*)$")
_SESSION_NAME_RX = re.compile(r"^(?P<subject>.+)-(?P<visit>\d+)$")


@dataclass(frozen=True)
class ChatCode:
    """One annotation code found in a raw CHAT line."""

    code: str
    span: tuple[int, int]
    known: bool = True

    @property
    def disorder(self) -> DisorderLabel | None:
        return CODE_DISORDERS.get(self.code)


@dataclass(frozen=True)
class AnnotatedUtterance:
    """
    One transcribed speaker turn.

    Attributes:
        raw: Verbatim tier content including codes
        text: Cleaned, code-free text
        speaker: Participant or interviewer
        codes: Annotation codes found in `raw`, in order of appearance
        label: Derived disorder label, None when the utterance is excluded
    """

    raw: str
    text: str
    speaker: Speaker
    codes: tuple[ChatCode, ...] = ()
    label: DisorderLabel | None = None

    @property
    def excluded(self) -> bool:
        return self.label is None

    @property
    def unknown_codes(self) -> tuple[ChatCode, ...]:
        return tuple(c for c in self.codes if not c.known)


@dataclass
class SessionRecord:
    """One picture-description session of one subject."""

    subject_id: str
    cohort: Cohort
    visit_index: int
    utterances: list[AnnotatedUtterance] = field(default_factory=list)
    mmse: int | None = None
    cdr: float | None = None

    def __post_init__(self):
        if self.visit_index < 1:
            raise ValueError(f"visit_index must be positive, got {self.visit_index}")
        if self.mmse is not None and not 0 <= self.mmse <= 30:
            raise ValueError(f"MMSE out of range [0, 30]: {self.mmse}")
        if self.cdr is not None and self.cdr not in VALID_CDR:
            raise ValueError(f"CDR must be one of {VALID_CDR}, got {self.cdr}")

    @property
    def session_id(self) -> str:
        return f"{self.subject_id}-{self.visit_index}"

    @property
    def included_utterances(self) -> list[AnnotatedUtterance]:
        """Participant utterances that carry a label."""
        return [u for u in self.utterances if not u.excluded]


def _canonical_bracket(token: str) -> str:
    inner = _WHITESPACE_RX.sub(" ", token[1:-1].strip())
    if inner.startswith("+"):
        inner = "+ " + inner[1:].strip()
    return f"[{inner}]"


def extract_codes(raw: str) -> tuple[ChatCode, ...]:
    """
    Find annotation codes in a raw tier line.

    Codes outside the annotation scheme (e.g. `[*]`, `&=laughs`, `+/.`) are kept
    with `known=False`.
    """
    codes = []
    for match in _CODE_RX.finditer(raw):
        kind = match.lastgroup
        token = match.group(kind)
        if kind == "bracket":
            code = _canonical_bracket(token)
        elif kind == "fragment":
            code = "&+"
        elif kind == "empty":
            code = "+ es"
        elif kind == "trailing":
            code = "+..."
        elif kind == "event":
            code = "&="
        else:
            code = token
        span = (match.start(kind), match.end(kind))
        codes.append(ChatCode(code=code, span=span, known=code in KNOWN_CODES))
    return tuple(codes)


def _replace_code(match: re.Match) -> str:
    kind = match.lastgroup
    if kind == "trailing":
        return "..."
    # Fragment and filler markers go, the spoken material stays
    if kind in ("fragment", "filler"):
        return ""
    return " "


def clean_text(raw: str) -> str:
    """
    Strip CHAT notation from a raw tier line, keeping what was spoken.

    Retraced material and repairs around `[/]`/`[//]` are kept, as are
    phonological fragments (`&+sp` -> `sp`).

    Examples:
        "his his sister's asking for one [//]." -> "his his sister's asking for one."
        "&+sp water spigot" -> "sp water spigot"
        "the boy is getting the +..." -> "the boy is getting the..."
    """
    text = _BULLET_RX.sub(" ", raw)
    text = _PAUSE_RX.sub(" ", text)
    text = _CODE_RX.sub(_replace_code, text)
    text = _SUFFIX_RX.sub("", text)
    text = text.replace("<", " ").replace(">", " ")
    text = text.replace("(", "").replace(")", "")
    text = _WHITESPACE_RX.sub(" ", text).strip()
    text = _SPACE_BEFORE_PUNCT_RX.sub("", text)
    return text


def clean_utterance(utt: AnnotatedUtterance) -> str:
    """Return the code-free text of an utterance, rebuilt from its raw line."""
    return clean_text(utt.raw)


def derive_label(
    utt: AnnotatedUtterance,
    precedence: Sequence[DisorderLabel] = DEFAULT_PRECEDENCE,
) -> DisorderLabel | None:
    """
    Map an utterance's codes to a single disorder label.

    Returns None when the utterance is excluded (interviewer turn or `[+ exc]`).
    When codes of several disorders co-occur, the first disorder in
    `precedence` wins.
    """
    if utt.speaker is Speaker.INTERVIEWER:
        return None
    found = set()
    for code in utt.codes:
        if code.code == EXCLUSION_CODE:
            return None
        if code.disorder is not None:
            found.add(code.disorder)
    if not found:
        return DisorderLabel.FLUENT
    for label in precedence:
        if label in found:
            return label
    # Precedence lists need not be exhaustive
    return sorted(found, key=lambda label: label.index)[0]


def annotate(
    raw: str,
    speaker: Speaker,
    precedence: Sequence[DisorderLabel] = DEFAULT_PRECEDENCE,
) -> AnnotatedUtterance:
    """Build an AnnotatedUtterance from a raw tier line."""
    utt = AnnotatedUtterance(raw=raw, text=clean_text(raw), speaker=speaker, codes=extract_codes(raw))
    return replace(utt, label=derive_label(utt, precedence))


def _parse_id_line(content: str, line_number: int) -> dict:
    parts = [p.strip() for p in content.split("|")]
    if len(parts) < 8:
        raise ChatParseError(f"@ID line has {len(parts)} fields, expected at least 8", line_number)
    info = {"code": parts[2], "group": parts[5], "mmse": None, "cdr": None}
    if info["code"] != PARTICIPANT_CODE:
        return info

    if len(parts) > 8 and parts[8]:
        try:
            info["mmse"] = int(parts[8])
        except ValueError:
            raise ChatParseError(f"MMSE is not an integer: {parts[8]!r}", line_number) from None
        if not 0 <= info["mmse"] <= 30:
            raise ChatParseError(f"MMSE out of range [0, 30]: {info['mmse']}", line_number)
    if len(parts) > 9 and parts[9]:
        try:
            info["cdr"] = float(parts[9])
        except ValueError:
            raise ChatParseError(f"CDR is not a number: {parts[9]!r}", line_number) from None
        if info["cdr"] not in VALID_CDR:
            raise ChatParseError(f"CDR must be one of {VALID_CDR}: {info['cdr']}", line_number)
    return info


def _join_tiers(lines: Iterable[str]) -> list[tuple[int, str]]:
    """Merge tab-indented continuation lines into the tier they continue."""
    tiers: list[tuple[int, str]] = []
    for line_number, raw_line in enumerate(lines, start=1):
        line = raw_line.rstrip("\r\n").lstrip("\ufeff")
        if not line.strip():
            continue
        if line[0] in " \t":
            if not tiers:
                raise ChatParseError("continuation line before any tier", line_number)
            start, text = tiers[-1]
            tiers[-1] = (start, f"{text} {line.strip()}")
            continue
        if line[0] not in "@*%":
            raise ChatParseError(f"malformed tier line: {line[:40]!r}", line_number)
        tiers.append((line_number, line))
    return tiers


def parse_chat_file(
    stream: TextIO | Iterable[str],
    source_name: str | None = None,
    precedence: Sequence[DisorderLabel] = DEFAULT_PRECEDENCE,
    warn_callback: Callable[[str], None] | None = None,
) -> SessionRecord:
    """
    Parse one CHAT document into a SessionRecord.

    Subject id and visit come from the `@Media` name (or `source_name`) in the
    `NNN-V` form, V being the 0-based visit number. Cohort, MMSE and CDR come
    from the participant's `@ID` line (fields 6, 9 and 10).

    Args:
        stream: Text stream or iterable of lines
        source_name: Fallback session name, usually the file stem
        precedence: Disorder precedence for multi-label collisions
        warn_callback: Called with a message for every unknown code

    Returns:
        SessionRecord with utterances in document order

    Raises:
        ChatParseError: On a malformed line or header, carrying the line number
        EmptySessionError: If the document has no participant tier
    """
    tiers = _join_tiers(stream)
    if not tiers:
        raise EmptySessionError(f"Empty CHAT document: {source_name or '<stream>'}")

    participant = None
    session_name = None
    utterances = []

    for line_number, line in tiers:
        if line.startswith("@"):
            header, _, content = line.partition(":")
            content = content.strip()
            if header == "@ID":
                info = _parse_id_line(content, line_number)
                if info["code"] == PARTICIPANT_CODE:
                    participant = (line_number, info)
            elif header == "@Media":
                session_name = content.split(",")[0].strip()
            continue
        if line.startswith("%"):
            continue

        match = _TIER_RX.match(line)
        if match is None:
            raise ChatParseError(f"malformed speaker tier: {line[:40]!r}", line_number)
        code = match.group("speaker").upper()
        speaker = Speaker.PARTICIPANT if code == PARTICIPANT_CODE else Speaker.INTERVIEWER
        utt = annotate(match.group("content").strip(), speaker, precedence)
        if warn_callback:
            for unknown in utt.unknown_codes:
                warn_callback(f"Warning: unknown CHAT code {unknown.code!r} on line {line_number}")
        utterances.append(utt)

    if not any(u.speaker is Speaker.PARTICIPANT for u in utterances):
        raise EmptySessionError(f"No participant tier in {source_name or '<stream>'}")
    if participant is None:
        raise ChatParseError("no @ID line for the participant", tiers[0][0])

    id_line, info = participant
    cohort = GROUP_TO_COHORT.get(info["group"].lower())
    if cohort is None:
        raise ChatParseError(f"unknown participant group {info['group']!r}", id_line)

    name = session_name or source_name
    if not name:
        raise ChatParseError("no @Media name or source name to derive the subject id", tiers[0][0])
    name_match = _SESSION_NAME_RX.match(name)
    if name_match:
        subject_id = name_match.group("subject")
        visit_index = int(name_match.group("visit")) + 1
    else:
        subject_id, visit_index = name, 1

    return SessionRecord(
        subject_id=subject_id,
        cohort=cohort,
        visit_index=visit_index,
        utterances=utterances,
        mmse=info["mmse"],
        cdr=info["cdr"],
    )


def parse_chat_path(
    path: Path,
    precedence: Sequence[DisorderLabel] = DEFAULT_PRECEDENCE,
    warn_callback: Callable[[str], None] | None = None,
) -> SessionRecord:
    """Parse a `.cha` file from disk (UTF-8)."""
    with open(path, encoding="utf-8") as f:
        return parse_chat_file(f, source_name=path.stem, precedence=precedence, warn_callback=warn_callback)


def format_chat(session: SessionRecord) -> str:
    """Render a SessionRecord as a CHAT document that parse_chat_file reads back."""
    mmse = "" if session.mmse is None else str(session.mmse)
    cdr = "" if session.cdr is None else f"{session.cdr:g}"
    group = COHORT_TO_GROUP[session.cohort]
    lines = [
        "@UTF8",
        "@Begin",
        "@Languages:\teng",
        "@Participants:\tPAR Participant, INV Investigator",
        f"@ID:\teng|Pitt|PAR|||{group}||Participant|{mmse}|{cdr}|",
        "@ID:\teng|Pitt|INV|||||Investigator|||",
        f"@Media:\t{session.subject_id}-{session.visit_index - 1}, audio",
    ]
    for utt in session.utterances:
        code = PARTICIPANT_CODE if utt.speaker is Speaker.PARTICIPANT else "INV"
        lines.append(f"*{code}:\t{utt.raw}")
    lines.append("@End")
    return "\n".join(lines) + "\n"
