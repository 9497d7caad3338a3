""" 命令行入口

子命令以插件形式放在 `plugins` 目录下，用 `on_command` 注册，
启动时由 `load_plugins` 全部导入
"""
import argparse
import importlib
import logging
import pkgutil
import sys
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional

from . import config
from .exceptions import (
    ConfigError, ExprSyntaxError, InvalidMeasure, NbdError, UnknownIdentifier, ValidationFailed
)
from .logger import add_console_handler, add_file_handler
from .rundata import RunData
from .scenario import Problem, Scenario, load_scenario

logger = logging.getLogger('nbd')

# 这些错误说明输入有误，退出码为 1；其余 NbdError 退出码为 2
USAGE_ERRORS = (ConfigError, ExprSyntaxError, UnknownIdentifier, ValidationFailed, InvalidMeasure)


class Session:
    """ 一次子命令调用

    `args` 为解析后的命令行参数，`data` 管理输出文件
    """
    def __init__(self, scenario: Scenario, args: argparse.Namespace, data: RunData):
        self.scenario = scenario
        self.args = args
        self.data = data
        # 写入清单的已解析参数
        self.parameters = {'scenario': scenario.data}

    @cached_property
    def problem(self) -> Problem:
        return Problem(self.scenario)

    def get(self, key, section=None, default=None):
        """ 命令行参数优先，其次场景中的 `section`，最后是默认值
        """
        value = getattr(self.args, key, None)
        if value is None and section is not None:
            value = self.scenario.section(section).get(key)
        if value is None:
            value = default
        self.parameters[key] = value
        return value


@dataclass
class Command:
    name: str
    func: Callable[[Session], None]
    help: str = ''
    arguments: List[Callable[[argparse.ArgumentParser], None]] = field(default_factory=list)

    def args_parser(self, func):
        """ 注册该子命令的额外参数
        """
        self.arguments.append(func)
        return func

    def __call__(self, session: Session):
        return self.func(session)


COMMANDS: Dict[str, Command] = {}


def on_command(name, help=''):
    def decorator(func):
        if name in COMMANDS:
            raise ValueError(f'command {name!r} is already registered')
        command = Command(name, func, help)
        COMMANDS[name] = command
        return command

    return decorator


def load_plugins(package='plugins'):
    """ 导入插件目录下的全部模块
    """
    module = importlib.import_module(package)
    for info in pkgutil.iter_modules(module.__path__):
        if not info.name.startswith('_'):
            importlib.import_module(f'{package}.{info.name}')
    return COMMANDS


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog='nbd',
        description='Elliptic operators with nonlocal boundary conditions'
    )
    parser.add_argument('--version', action='version', version=f'nbd {config.VERSION}')
    subparsers = parser.add_subparsers(dest='subcommand', metavar='<subcommand>')
    subparsers.required = True
    for name in sorted(COMMANDS):
        command = COMMANDS[name]
        sub = subparsers.add_parser(name, help=command.help)
        sub.add_argument('--config', required=True, help='scenario JSON file')
        sub.add_argument(
            '--set', action='append', default=[], metavar='KEY=VALUE', dest='overrides',
            help='override a scenario value, e.g. solver.tol=1e-12'
        )
        sub.add_argument('--out-dir', default='.', help='output directory')
        for add_arguments in command.arguments:
            add_arguments(sub)
    return parser


def setup_logging():
    logger.setLevel(logging.DEBUG)
    if not logger.handlers:
        add_console_handler(logger, config.LOG_LEVEL)
        add_file_handler(logger, config.LOG_FILE_PATH)


def run(argv: Optional[List[str]] = None) -> int:
    """ 执行子命令并返回退出码
    """
    load_plugins()
    setup_logging()
    try:
        args = build_parser().parse_args(argv)
        scenario = load_scenario(args.config, args.overrides)
        data = RunData(scenario.name, args.out_dir, args.subcommand)
        session = Session(scenario, args, data)
        logger.info(f'{args.subcommand} {scenario.name} (nbd {config.VERSION})')
        try:
            COMMANDS[args.subcommand](session)
        finally:
            # 检查失败时已经写出的文件也记入清单
            if data.outputs:
                data.save_manifest(scenario, session.parameters)
    except USAGE_ERRORS as e:
        logger.error(f'{type(e).__name__}: {e}')
        return 1
    except NbdError as e:
        logger.error(f'{type(e).__name__}: {e}')
        return 2
    return 0


def main():
    sys.exit(run())
