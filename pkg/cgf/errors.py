class CGFError(Exception):
    """Base class for every error raised by the cgf package"""


class InvalidConfig(CGFError, ValueError):
    pass


# series / core

class MissingTarget(CGFError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptySeries(CGFError, ValueError):
    pass


class ParseError(CGFError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column

    def __str__(self):
        where = []
        if self.row is not None:
            where.append('row {}'.format(self.row))
        if self.column is not None:
            where.append('column {!r}'.format(self.column))
        if where:
            return '{} ({})'.format(self.args[0], ', '.join(where))
        return self.args[0]


class InfeasibleWindowing(CGFError, ValueError):
    pass


class DegenerateRange(CGFError, ValueError):
    pass


class LengthMismatch(CGFError, ValueError):
    pass


# fuzzy

class DegenerateUniverse(CGFError, ValueError):
    pass


class EmptyRuleBase(CGFError, ValueError):
    pass


# causal

class InsufficientSamples(CGFError, ValueError):
    pass


class RankDeficientConditions(UserWarning):
    """Conditioning matrix lost rank; collinear columns were dropped"""


# textgen

class EmptyGraph(CGFError, ValueError):
    pass


# tokenizer

class MalformedVocab(CGFError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        if self.line is None:
            return self.args[0]
        return '{} (line {})'.format(self.args[0], self.line)


class MergeNotInVocab(MalformedVocab):
    pass


class UnknownId(CGFError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# model

class SequenceTooLong(CGFError, ValueError):
    pass


class NonFiniteParameter(CGFError, FloatingPointError):
    def __init__(self, tensor_name):
        super().__init__('non-finite values in parameter {!r}'.format(tensor_name))
        self.tensor_name = tensor_name


# harness

class UnstableSpec(CGFError, ValueError):
    pass


class ShapeMismatch(CGFError, ValueError):
    pass
