import sys
from pathlib import Path

# 測試以與 app.py 相同的方式匯入頂層套件
sys.path.insert(0, str(Path(__file__).resolve().parent))
