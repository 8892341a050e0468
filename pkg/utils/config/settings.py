import os
import dotenv

dotenv.load_dotenv()

# Process-level settings; everything experiment-specific lives in the
# pydantic configs (TrainConfig, DatasetConfig, NetworkConfig).
LOG_LEVEL = os.getenv("MAAE_LOG_LEVEL", "INFO").upper()
DEVICE = os.getenv("MAAE_DEVICE", "cpu")
NUM_WORKERS = int(os.getenv("MAAE_NUM_WORKERS", "4"))
CHECKPOINT_DIR = os.getenv("MAAE_CHECKPOINT_DIR", "ckpt")
