""" 配置文件

工具级别的设置保存在 `nbd.ini` 中，场景设置使用 JSON（见 `nbd.scenario`）
"""
import configparser
import os
import shutil
from pathlib import Path

HOME_DIR = Path(__file__).resolve().parents[1]
SCENARIOS_DIR_PATH = HOME_DIR / 'scenarios'

DATA_DIR = Path(os.environ.get('NBD_HOME', Path.home() / '.nbd'))
CONFIG_FILE_PATH = DATA_DIR / 'nbd.ini'
LOG_FILE_PATH = DATA_DIR / 'nbd.log'

# 读取配置文件，如不存在就使用默认配置
EXAMPLE_CONFIG_FILE_PATH = HOME_DIR / 'nbd.ini.example'
if not CONFIG_FILE_PATH.exists():
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    shutil.copy(EXAMPLE_CONFIG_FILE_PATH, CONFIG_FILE_PATH)

config = configparser.ConfigParser()
# 先读默认配置，用户配置中缺少的项使用默认值
config.read([EXAMPLE_CONFIG_FILE_PATH, CONFIG_FILE_PATH], encoding='UTF-8')

VERSION = '0.1.0'

LOG_LEVEL = config.get('nbd', 'log_level', fallback='INFO').upper()

# 环境变量 NBD_THREADS 优先，其次配置文件，默认使用全部核心
_threads = os.environ.get('NBD_THREADS') or config.get(
    'nbd', 'threads', fallback=''
)
THREADS = max(1, int(_threads)) if _threads.strip() else (os.cpu_count() or 1)

SOLVER_TOL = config.getfloat('solver', 'tol', fallback=1e-10)
SOLVER_MAX_ITER = config.getint('solver', 'max_iter', fallback=20000)
CACHE_SIZE = config.getint('solver', 'cache_size', fallback=32)

MAX_DENSE_DIM = config.getint('spectral', 'max_dense_dim', fallback=4096)

MC_CHUNK_SIZE = config.getint('mc', 'chunk_size', fallback=4096)

CHECK_MC_PATHS = config.getint('check', 'mc_paths', fallback=4000)
