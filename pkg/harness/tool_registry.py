"""
Tool Registry
=============

Registers the known command adapters under their tool names.
"""
import importlib
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from harness.config import TOOLS_CONFIG

logger = logging.getLogger(__name__)

project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))


class ToolRegistry:
    """Loads every enabled adapter of ``tools.adapters``"""

    # 🎯 ADAPTADORES CONOCIDOS (módulo, clase)
    known_adapters = [
        ("construct_adapter", "ConstructAdapter"),
        ("fit_adapter", "FitAdapter"),
        ("baseline_adapter", "BaselineAdapter"),
        ("report_adapter", "ReportAdapter"),
    ]

    def __init__(self):
        self.tools: Dict[str, object] = {}
        self._discover_tools()

    def _discover_tools(self):
        """Descubrir y registrar los adaptadores habilitados"""
        package = TOOLS_CONFIG["adapters_package"]
        for module_name, class_name in self.known_adapters:
            try:
                module = importlib.import_module(f"{package}.{module_name}")
                tool = getattr(module, class_name)()
            except (ImportError, AttributeError) as e:
                logger.error(f"❌ Failed to load {module_name}: {e}")
                continue
            if tool.name not in TOOLS_CONFIG["enabled_tools"]:
                logger.debug(f"⚠️ Tool {tool.name} is disabled")
                continue
            self.tools[tool.name] = tool
            logger.debug(f"✅ Registered tool: {tool.name} ({class_name})")

    def get_all_tools(self) -> Dict[str, object]:
        return self.tools.copy()

    def get_tool(self, name: str) -> Optional[object]:
        return self.tools.get(name)

    def list_tool_names(self) -> List[str]:
        return list(self.tools.keys())
