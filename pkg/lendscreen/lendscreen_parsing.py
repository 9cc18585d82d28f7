import dataclasses
import json
import logging
import re
from typing import Any, Dict, Iterable, List, Mapping, Union

from .lendscreen_errors import ConfigError, DatasetParseError
from .lendscreen_types import (BORROWER_FIELDS, DEMOGRAPHIC_FIELDS,
                               REPAYMENT_FIELDS,
                               BorrowerHistory, GeneratorConfig, LossWeights,
                               ModelConfig, ProfitModel, TrainConfig)


class type_parsing:

    # bool
    @staticmethod
    def to_bool(bool_val: Union[bool, str, float, int]):
        if isinstance(bool_val, bool):
            return bool_val
        elif bool_val in ("1", "true", "yes", "on", 1):
            return True
        elif bool_val in ("0", "false", "no", "off", 0):
            return False
        else:
            return bool_val

    # ints
    @staticmethod
    def str_to_int(int_str: Union[int, float, str]):
        if isinstance(int_str, str) and bool(re.match(r"^-?[0-9]+$", int_str)):
            num = int(int_str)
            # seeds are 64 bit; larger literals stay strings
            if num.bit_length() <= 64:
                return num
            else:
                return int_str
        else:
            return int_str

    # floats
    @staticmethod
    def str_to_float(float_str: Union[int, float, str]):
        if isinstance(float_str, str) and bool(
                re.match(r"^-?([0-9]*\.[0-9]+|[0-9]+\.?)([eE][-+]?[0-9]+)?$",
                         float_str)):
            return float(float_str)
        else:
            return float_str

    @staticmethod
    def scalar(value: Any):
        """Best effort coercion of a command line string."""
        if not isinstance(value, str):
            return value
        for parser in (type_parsing.str_to_int, type_parsing.str_to_float,
                       type_parsing.to_bool):
            parsed = parser(value)
            if not isinstance(parsed, str):
                return parsed
        return value

    @staticmethod
    def float_list(text: str) -> List[float]:
        values = [type_parsing.str_to_float(part.strip())
                  for part in text.split(',') if part.strip()]
        for value in values:
            if isinstance(value, str):
                raise ValueError(f"not a number: '{value}'")
        return [float(value) for value in values]

    @staticmethod
    def int_list(text: str) -> List[int]:
        values = [type_parsing.str_to_int(part.strip())
                  for part in text.split(',') if part.strip()]
        for value in values:
            if isinstance(value, str):
                raise ValueError(f"not an integer: '{value}'")
        return values


class RecordParsers(object):
    """Turns decoded JSON lines into validated `BorrowerHistory` records."""

    def _field(self, record: Mapping, name: str, line: int, prefix: str = ''):
        if not isinstance(record, Mapping) or name not in record:
            raise DatasetParseError(line, "missing required field",
                                    field=prefix + name)
        return record[name]

    def _number(self, value, name: str, line: int) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DatasetParseError(line, f"expected a number, got {value!r}",
                                    field=name)
        return float(value)

    def _integer(self, value, name: str, line: int) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise DatasetParseError(line, f"expected an integer, got {value!r}",
                                    field=name)
        return value

    def _sequence(self, value, name: str, line: int) -> list:
        if not isinstance(value, list):
            raise DatasetParseError(line, "expected a list", field=name)
        return value

    def demographics(self, record: Mapping, line: int) -> dict:
        parsed = {}
        for name in DEMOGRAPHIC_FIELDS:
            value = self._field(record, name, line, 'demographics.')
            if name == 'homeownership':
                parsed[name] = self._integer(value, name, line)
            else:
                parsed[name] = self._number(value, name, line)
        return parsed

    def application(self, record: Mapping, line: int) -> dict:
        return {
            'amount': self._number(
                self._field(record, 'amount', line, 'applications.'),
                'amount', line),
            'annual_interest_rate': self._number(
                self._field(record, 'annual_interest_rate', line,
                            'applications.'),
                'annual_interest_rate', line),
            'term_months': self._integer(
                self._field(record, 'term_months', line, 'applications.'),
                'term_months', line),
        }

    def repayment(self, record: Mapping, line: int) -> dict:
        return {name: self._number(
            self._field(record, name, line, 'repayments.'), name, line)
            for name in REPAYMENT_FIELDS}

    def borrower(self, record: Any, line: int) -> BorrowerHistory:
        if not isinstance(record, dict):
            raise DatasetParseError(line, "expected a JSON object")
        for name in BORROWER_FIELDS:
            self._field(record, name, line)

        applications = [self.application(item, line) for item in
                        self._sequence(record['applications'], 'applications',
                                       line)]
        repayments = [self.repayment(item, line) for item in
                      self._sequence(record['repayments'], 'repayments', line)]
        labels = [self._integer(item, 'labels', line) for item in
                  self._sequence(record['labels'], 'labels', line)]
        observability = [self._integer(item, 'observability', line)
                         for item in self._sequence(record['observability'],
                                                    'observability', line)]

        length = len(applications)
        if length < 1:
            raise DatasetParseError(line, "empty history", field='applications')
        for name, values in (('repayments', repayments), ('labels', labels),
                             ('observability', observability)):
            if len(values) != length:
                raise DatasetParseError(
                    line, f"length {len(values)} differs from {length}",
                    field=name)
        if any(label not in (-1, 0, 1) for label in labels):
            raise DatasetParseError(line, "labels must be -1, 0 or 1",
                                    field='labels')

        return BorrowerHistory(
            borrower_id=str(record['borrower_id']),
            demographics=self.demographics(record['demographics'], line),
            applications=applications,
            repayments=repayments,
            labels=labels,
            observability=observability,
            latent_creditworthiness=self._number(
                record['latent_creditworthiness'], 'latent_creditworthiness',
                line))

    def borrowers(self, lines: Iterable[str]) -> List[BorrowerHistory]:
        histories = []
        for number, text in enumerate(lines, start=1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as error:
                logging.getLogger(__name__).error(
                    f"Malformed JSON on line {number}: {error}")
                raise DatasetParseError(number, f"malformed JSON ({error.msg})")
            histories.append(self.borrower(record, number))
        return histories


_SECTIONS = {
    'generator': GeneratorConfig,
    'model': ModelConfig,
    'training': TrainConfig,
    'profit': ProfitModel,
}


class ConfigParsers(object):
    """Builds config dataclasses from a JSON document plus overrides."""

    SECTIONS = tuple(_SECTIONS) + ('experiment',)

    def _build(self, section: str, cls, values: Mapping[str, Any]):
        known = {item.name: item for item in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f'{section}.{key}', 'unknown key')
            if cls is TrainConfig and key == 'weights':
                if isinstance(value, LossWeights):
                    kwargs[key] = value
                else:
                    kwargs[key] = self._build(f'{section}.weights',
                                              LossWeights, value or {})
                continue
            kwargs[key] = self._coerce(f'{section}.{key}', known[key], value)
        try:
            return cls(**kwargs)
        except TypeError as error:
            raise ConfigError(section, str(error))

    def _coerce(self, name: str, field: dataclasses.Field, value):
        default = field.default
        if isinstance(default, bool):
            value = type_parsing.to_bool(value)
            if not isinstance(value, bool):
                raise ConfigError(name, f"expected a boolean, got {value!r}")
        elif isinstance(default, int):
            value = type_parsing.str_to_int(value)
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(name, f"expected an integer, got {value!r}")
        elif isinstance(default, float):
            value = type_parsing.str_to_float(type_parsing.str_to_int(value))
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(name, f"expected a number, got {value!r}")
            value = float(value)
        return value

    def parse(self, document: Mapping[str, Any],
              overrides: Iterable[str] = ()) -> Dict[str, Any]:
        """Returns {'generator', 'model', 'training', 'profit', 'experiment'}.

        `overrides` are `section.key=value` strings and win over the document.
        """
        if not isinstance(document, Mapping):
            raise ConfigError('<root>', 'config must be a JSON object')
        sections: Dict[str, Dict[str, Any]] = {}
        for section, values in document.items():
            if section not in self.SECTIONS:
                raise ConfigError(section, 'unknown section')
            if not isinstance(values, Mapping):
                raise ConfigError(section, 'section must be a JSON object')
            sections[section] = dict(values)

        for override in overrides:
            path, separator, raw = override.partition('=')
            parts = path.strip().split('.')
            if not separator or len(parts) < 2 or parts[0] not in self.SECTIONS:
                raise ConfigError(override,
                                  "override must look like section.key=value")
            target = sections.setdefault(parts[0], {})
            for part in parts[1:-1]:
                target = target.setdefault(part, {})
            target[parts[-1]] = type_parsing.scalar(raw.strip())

        parsed: Dict[str, Any] = {
            section: self._build(section, cls, sections.get(section, {}))
            for section, cls in _SECTIONS.items()}
        for config in parsed.values():
            config.validate()
        parsed['experiment'] = sections.get('experiment', {})
        return parsed


def loads_config(text: str, overrides: Iterable[str] = ()) -> Dict[str, Any]:
    try:
        document = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as error:
        raise ConfigError('<root>', f"malformed JSON ({error.msg})")
    return ConfigParsers().parse(document, overrides)


def snapshot(configs: Mapping[str, Any]) -> Dict[str, Any]:
    """JSON-ready copy of parsed configs."""
    result = {}
    for name, config in configs.items():
        if dataclasses.is_dataclass(config):
            result[name] = json.loads(json.dumps(dataclasses.asdict(config),
                                                 default=str))
        else:
            result[name] = config
    return result
