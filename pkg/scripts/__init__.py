"""ソーシャルコマース分析ツール"""

__version__ = "0.1.0"
