from .utils import ensure_dir, sanitize_filename
