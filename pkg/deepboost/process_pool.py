from concurrent.futures import Future, ProcessPoolExecutor
from typing import Any, Callable, Dict, Optional
import uuid

from utils.logger import Logger
from utils.exceptions import ProcessError

logger = Logger.get_logger(__name__)

class ProcessPool:
    """Pool for running independent training jobs in worker processes.

    With max_processes == 1 jobs run inline in the calling process, which keeps
    single-worker runs free of pickling and process start-up.
    """

    def __init__(self, max_processes: int = 4):
        """Initialize process pool"""
        if max_processes < 1:
            raise ProcessError(f"max_processes must be >= 1, got {max_processes}")
        self.max_processes = max_processes
        self.executor: Optional[ProcessPoolExecutor] = (
            ProcessPoolExecutor(max_workers=max_processes) if max_processes > 1 else None
        )
        self.futures: Dict[str, Future] = {}
        self.results: Dict[str, Any] = {}
        self.errors: Dict[str, str] = {}
        logger.debug(f"Process pool initialized with max_processes={max_processes}")

    def __enter__(self) -> 'ProcessPool':
        return self

    def __exit__(self, exc_type, exc, tb):
        self.cleanup()

    def start_process(self, target: Callable, args: tuple = ()) -> str:
        """Start a new job and return its ID"""
        process_id = str(uuid.uuid4())
        if self.executor is None:
            self._run_inline(process_id, target, args)
            return process_id
        try:
            self.futures[process_id] = self.executor.submit(target, *args)
            logger.debug(f"Started process {process_id}")
            return process_id
        except Exception as e:
            logger.error(f"Failed to start process: {str(e)}", exc_info=True)
            raise ProcessError(str(e))

    def _run_inline(self, process_id: str, target: Callable, args: tuple):
        """Run the target function and store its result"""
        try:
            self.results[process_id] = target(*args)
        except Exception as e:
            self.errors[process_id] = str(e)
            logger.error(f"Process {process_id} failed: {str(e)}", exc_info=True)

    def _collect(self, process_id: str):
        future = self.futures.get(process_id)
        if future is None or process_id in self.results or process_id in self.errors:
            return
        if not future.done():
            return
        if future.cancelled():
            return
        error = future.exception()
        if error is not None:
            self.errors[process_id] = str(error)
            logger.error(f"Process {process_id} failed: {error}")
        else:
            self.results[process_id] = future.result()

    def get_process_status(self, process_id: str) -> str:
        """Get the status of a job"""
        if process_id not in self.futures and process_id not in self.results and process_id not in self.errors:
            return "not_found"
        self._collect(process_id)
        if process_id in self.errors:
            return "failed"
        if process_id in self.results:
            return "completed"
        if self.futures[process_id].cancelled():
            return "cancelled"
        return "running"

    def get_process_error(self, process_id: str) -> Optional[str]:
        """Get the error message if the job failed"""
        self._collect(process_id)
        return self.errors.get(process_id)

    def get_process_result(self, process_id: str) -> Any:
        """Get the result of a completed job"""
        self._collect(process_id)
        return self.results.get(process_id)

    def wait(self, process_id: str) -> Any:
        """Block until a job finishes; return its result or raise ProcessError"""
        future = self.futures.get(process_id)
        if future is not None:
            try:
                future.result()
            except Exception:
                pass
        status = self.get_process_status(process_id)
        if status == "failed":
            raise ProcessError(self.get_process_error(process_id))
        if status != "completed":
            raise ProcessError(f"Process {process_id} produced no result ({status})")
        return self.get_process_result(process_id)

    def cleanup(self):
        """Cancel pending jobs and shut the workers down"""
        if self.executor is not None:
            self.executor.shutdown(wait=True, cancel_futures=True)
            self.executor = None
        self.futures.clear()
        self.results.clear()
        self.errors.clear()
        logger.debug("Process pool cleaned up")
