""" Logger 配置

控制台只打印简短信息，完整记录写入数据目录下的日志文件
"""
import logging
import sys

FILE_FORMAT = '%(asctime)s - %(filename)s - %(lineno)s - %(levelname)s - %(message)s'
CONSOLE_FORMAT = '%(levelname)s - %(message)s'


def _handler(handler, level, fmt):
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt))
    return handler


def add_file_handler(logger, path):
    logger.addHandler(
        _handler(logging.FileHandler(path, encoding='UTF-8'), logging.DEBUG, FILE_FORMAT)
    )


def add_console_handler(logger, level='INFO'):
    """ 输出到 stderr，stdout 留给 --version 等
    """
    logger.addHandler(_handler(logging.StreamHandler(sys.stderr), level, CONSOLE_FORMAT))
