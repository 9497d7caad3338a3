""" 运行输出
"""
import csv
import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path

import msgpack
import numpy as np
from dateutil.relativedelta import relativedelta

from . import config

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def format_duration(start: datetime, end: datetime) -> str:
    """ 人类可读的耗时，例如 `1h 2m 3.5s`
    """
    rdate = relativedelta(end, start)
    text = ''
    if rdate.days:
        text += f'{rdate.days}d '
    if rdate.hours:
        text += f'{rdate.hours}h '
    if rdate.minutes:
        text += f'{rdate.minutes}m '
    text += f'{rdate.seconds + rdate.microseconds / 1e6:.3f}s'
    return text


def _packable(obj):
    """ numpy 数组转为 msgpack 能序列化的结构，复数存为 [re, im]
    """
    if isinstance(obj, dict):
        return {str(k): _packable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_packable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {'re': obj.real.tolist(), 'im': obj.imag.tolist()}
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class RunData:
    """ 运行数据管理

    所有输出写到 `out_dir` 下，文件名以场景名开头。
    记录每个输出文件的 SHA-256，最后写出运行清单。
    """
    def __init__(self, name, out_dir, subcommand):
        self.name = name
        self.subcommand = subcommand
        self._base_path = Path(out_dir)
        self._base_path.mkdir(parents=True, exist_ok=True)
        self.outputs = {}
        self.results = {}
        self.start_time = datetime.now()

    def path(self, filename) -> Path:
        return self._base_path / filename

    def filename(self, suffix='csv', part=''):
        """ `<场景名>.<子命令>[.part].<后缀>`
        """
        stem = f'{self.name}.{self.subcommand}'
        if part:
            stem += f'.{part}'
        return f'{stem}.{suffix}'

    def save_table(self, header, rows, part='') -> Path:
        """ 写数值表格，浮点数保留 17 位有效数字
        """
        path = self.path(self.filename('csv', part))
        array = np.asarray(rows, dtype=float).reshape(-1, len(header))
        with open(path, 'w', newline='') as f:
            np.savetxt(
                f, array, fmt=FLOAT_FORMAT, delimiter=',', header=','.join(header),
                comments=''
            )
        return self._record(path)

    def save_records(self, header, rows, part='') -> Path:
        """ 写含文本列的表格
        """
        path = self.path(self.filename('csv', part))
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([
                    format(v, '.17g') if isinstance(v, float) else v for v in row
                ])
        return self._record(path)

    def save_msgpack(self, data, part='') -> Path:
        path = self.path(self.filename('msgpack', part))
        with open(path, 'wb') as f:
            f.write(msgpack.packb(_packable(data), use_bin_type=True))
        return self._record(path)

    def load_msgpack(self, filename):
        with open(self.path(filename), 'rb') as f:
            return msgpack.unpackb(f.read(), raw=False)

    def _record(self, path: Path) -> Path:
        self.outputs[path.name] = digest(path)
        return path

    def verify(self):
        """ 清单中的摘要与磁盘上的文件是否一致
        """
        return all(digest(self.path(name)) == value for name, value in self.outputs.items())

    def save_manifest(self, scenario, parameters=None) -> Path:
        """ 写出运行清单，写之前重新核对每个输出文件的摘要
        """
        end_time = datetime.now()
        verified = self.verify()
        if not verified:
            logger.warning('output files changed after they were written')
        manifest = {
            'scenario': self.name,
            'subcommand': self.subcommand,
            'parameters': _packable(parameters or {}),
            'resolution': scenario.n,
            'coefficients': _packable(scenario.coefficients.sources()),
            'measure': _packable(scenario.measure.describe()),
            'seed': scenario.process.seed if scenario.process else None,
            'version': config.VERSION,
            'start': self.start_time.isoformat(),
            'end': end_time.isoformat(),
            'duration': format_duration(self.start_time, end_time),
            'results': _packable(self.results),
            'outputs': [
                {'file': name, 'sha256': value} for name, value in self.outputs.items()
            ],
            'verified': verified,
        }
        path = self.path(f'{self.name}.manifest.json')
        with open(path, 'w', encoding='UTF-8') as f:
            json.dump(manifest, f, indent=2, ensure_ascii=False)
        return path


def digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            sha.update(block)
    return sha.hexdigest()


def coordinate_header(dimension, prefix='node'):
    return [f'{prefix}_{axis}' for axis in 'xy'[:dimension]]
