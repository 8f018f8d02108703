import configparser
import os
from pathlib import Path

from absl import flags

# Flags defined through add() belong to the calling module, not to this one
flags.disclaim_key_flags()

ENV_PREFIX = "RESPNET_"

# Names registered through add(), in registration order
_REGISTERED = []


class UnknownHparam(KeyError):
    pass


def get(name):
    """
    Just use absl as global backend to hold actual values
    """
    return flags.FLAGS[name].value


def add(name, default_value=None, dtype=None, **kwargs):
    """
    Adds a global hyperparameter

    A hyperparameter will get an absl flag defined, and will be required unless a default value is provided.
    Passing enum_values makes it an enum flag, dtype=list makes it a comma separated list flag. Only flags of the
    global flags.FLAGS take part in resolve and dump.

    :param name:
    :param default_value:
    :param dtype:
    :param kwargs:
    :return:
    """
    dtype = dtype if dtype is not None else type(default_value)
    if "enum_values" in kwargs:
        flags.DEFINE_enum(name, default_value, **kwargs)
    elif dtype == bool:
        flags.DEFINE_bool(name, default_value, **kwargs)
    elif dtype == int:
        flags.DEFINE_integer(name, default_value, **kwargs)
    elif dtype == str:
        flags.DEFINE_string(name, default_value, **kwargs)
    elif dtype == float:
        flags.DEFINE_float(name, default_value, **kwargs)
    elif dtype == list:
        flags.DEFINE_list(name, default_value, **kwargs)
    else:
        raise RuntimeError("Unsupported type for hparam {}".format(name))
    flag_values = kwargs.get("flag_values", flags.FLAGS)
    if default_value is None:
        flags.mark_flag_as_required(name, flag_values=flag_values)
    if flag_values is flags.FLAGS:
        _REGISTERED.append(name)


def register(*names):
    """
    Adds flags that are defined elsewhere (paths, typically) to the resolved and dumped configuration without
    making them required
    """
    for name in names:
        if name not in flags.FLAGS:
            raise UnknownHparam("No flag named '{}'".format(name))
        if name not in _REGISTERED:
            _REGISTERED.append(name)


def registered():
    return list(_REGISTERED)


def _set_from_text(name, text):
    if name not in _REGISTERED:
        raise UnknownHparam("Unknown hyperparameter '{}'".format(name))
    flag = flags.FLAGS[name]
    if not isinstance(text, str):
        flag.value = text
    elif text == "" and flag.default is None:
        flag.value = None
    else:
        try:
            flag.value = flag.parser.parse(text)
        except (ValueError, TypeError) as e:
            raise flags.IllegalFlagValueError("{}={!r}: {}".format(name, text, e))


def apply_overrides(values, protected=()):
    """
    Sets hyperparameters from a mapping, skipping the names in `protected` (typically the flags that were given
    explicitly on the command line, which always win)
    """
    for name, value in values.items():
        if name in protected:
            continue
        _set_from_text(name, value)


def read_config_file(path: Path):
    """
    Reads a key = value file with [sections]. Sections only group keys, the namespace is flat.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with Path(path).open("r") as f:
        parser.read_file(f)
    values = {}
    for section in parser.sections():
        values.update(parser.items(section))
    return values


def read_env(environ=None):
    environ = os.environ if environ is None else environ
    values = {}
    for name in _REGISTERED:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            values[name] = environ[key]
    return values


def command_line_names():
    return {name for name in _REGISTERED if flags.FLAGS[name].present}


def resolve(preset_values=None, config_path=None, environ=None):
    """
    Layers defaults < preset < config file < environment < command line
    """
    explicit = command_line_names()
    if preset_values:
        apply_overrides(preset_values, protected=explicit)
    if config_path:
        apply_overrides(read_config_file(config_path), protected=explicit)
    apply_overrides(read_env(environ), protected=explicit)


def _serialize(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


def dump(path: Path):
    """
    Writes every registered hyperparameter, grouped by the module that defined it
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for module, module_flags in sorted(flags.FLAGS.flags_by_module_dict().items()):
        names = sorted(f.name for f in module_flags if f.name in _REGISTERED)
        if not names:
            continue
        section = Path(module).stem if module.endswith(".py") else module.rsplit(".", 1)[-1]
        if not parser.has_section(section):
            parser.add_section(section)
        for name in names:
            parser.set(section, name, _serialize(get(name)))
    with Path(path).open("w") as f:
        parser.write(f)
