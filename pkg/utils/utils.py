from pathlib import Path
from typing import Union

def sanitize_filename(filename: str) -> str:
    """Remove invalid characters from filename"""
    # Remove invalid characters
    invalid_chars = '<>:"/\\|?* '
    for char in invalid_chars:
        filename = filename.replace(char, '_')
    # Remove control characters
    filename = "".join(char for char in filename if ord(char) >= 32)
    return filename.strip('._') or 'unnamed'

def format_size(size_bytes: float) -> str:
    """Format size in bytes to human readable string"""
    for unit in ['B', 'KB', 'MB', 'GB']:
        if size_bytes < 1024:
            return f"{size_bytes:.1f} {unit}"
        size_bytes /= 1024
    return f"{size_bytes:.1f} TB"

def format_duration(seconds: float) -> str:
    """Format a wall-clock duration as h/m/s"""
    if seconds < 60:
        return f"{seconds:.2f}s"
    minutes, secs = divmod(seconds, 60)
    if minutes < 60:
        return f"{int(minutes)}m {secs:.0f}s"
    hours, minutes = divmod(minutes, 60)
    return f"{int(hours)}h {int(minutes)}m"

def ensure_dir(path: Union[str, Path]) -> Path:
    """Create a directory (and parents) if needed and return it"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path

def derive_seed(seed: int, class_id: int) -> int:
    """Per-class seed: reproducible yet decorrelated across classes"""
    return int(seed) + int(class_id)

