from lib.net import fetch
