"""
Console text coloring and tagged status printing.

Everything here writes to stderr; stdout is reserved for report documents.
"""

import sys

#
# Console text coloring
#

try:
	import colorama
	from colorama import Fore, Style
	colorama.init()

	FOREGROUND_GREEN			= Fore.GREEN
	FOREGROUND_INTENSE_CYAN		= Fore.CYAN + Style.BRIGHT
	FOREGROUND_INTENSE_RED		= Fore.RED + Style.BRIGHT
	FOREGROUND_INTENSE_YELLOW	= Fore.YELLOW + Style.BRIGHT
	FOREGROUND_WHITE			= Fore.WHITE + Style.BRIGHT

	RESET_COLORS				= Style.RESET_ALL

except ImportError:
	# Fallback if colorama not available
	FOREGROUND_GREEN			= ""
	FOREGROUND_INTENSE_CYAN		= ""
	FOREGROUND_INTENSE_RED		= ""
	FOREGROUND_INTENSE_YELLOW	= ""
	FOREGROUND_WHITE			= ""

	RESET_COLORS				= ""

_quiet = False


def set_quiet(quiet):
	global _quiet
	_quiet = bool(quiet)


def print_color(print_string, color):
	if color and sys.stderr.isatty():
		print(color + print_string + RESET_COLORS, file=sys.stderr)
	else:
		print(print_string, file=sys.stderr)


def log_info(message, tag="INFO"):
	if not _quiet:
		print_color(f"[{tag}] {message}", FOREGROUND_INTENSE_CYAN)


def log_ok(message, tag="OK"):
	if not _quiet:
		print_color(f"[{tag}] {message}", FOREGROUND_GREEN)


def log_warning(message, tag="WARNING"):
	print_color(f"[{tag}] {message}", FOREGROUND_INTENSE_YELLOW)


def log_error(message, tag="ERROR"):
	print_color(f"[{tag}] {message}", FOREGROUND_INTENSE_RED)


#
# Time
#

# duration in seconds, return elapsed time in hh:mm:ss
def elapsed_time(duration):
	e = int(duration)
	return '{:02d}:{:02d}:{:02d}'.format(e // 3600, (e % 3600 // 60), e % 60)
