import platform
import sys
from typing import Dict, Optional

import psutil


def _cpu_name() -> str:
    processor = platform.processor()
    if platform.system() == "Linux":
        try:
            with open('/proc/cpuinfo', 'r') as f:
                for line in f:
                    if line.startswith('model name'):
                        return line.split(':', 1)[-1].strip()
        except OSError:
            pass
    return processor or platform.machine()


def get_host_info() -> Dict[str, Optional[str]]:
    """Description of the machine a scenario ran on, recorded in each manifest."""
    return {
        'HostName': platform.node(),
        'Cpu': _cpu_name(),
        'CpuCount': psutil.cpu_count(logical=True),
        'RamGb': round(psutil.virtual_memory().total / (1024 ** 3), 1),
        'Os': platform.system(),
        'OsVersion': platform.release(),
        'Python': platform.python_version(),
    }


def get_library_versions() -> Dict[str, str]:
    import allantools
    import numpy
    import pandas
    import scipy

    return {
        'python': sys.version.split()[0],
        'numpy': numpy.__version__,
        'scipy': scipy.__version__,
        'allantools': getattr(allantools, '__version__', 'unknown'),
        'pandas': pandas.__version__,
        'psutil': psutil.__version__,
    }


def peak_rss_mb() -> float:
    """Resident set size of this process in MB (peak where the OS reports it)."""
    info = psutil.Process().memory_info()
    peak = getattr(info, 'peak_wset', None) or getattr(info, 'rss', 0)
    try:
        import resource

        ru = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        # Linux reports KiB, macOS bytes
        ru_bytes = ru if platform.system() == "Darwin" else ru * 1024
        peak = max(peak, ru_bytes)
    except ImportError:
        pass
    return peak / (1024 ** 2)
