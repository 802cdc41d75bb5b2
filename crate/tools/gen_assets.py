#!/usr/bin/env python3
"""One-off generator for the bundled lexicon assets in crates/core/assets.

Run from the repo root:  python3 tools/gen_assets.py
"""
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "assets")

FUNCTION_WORDS = """
a an the this that these those some any each every no all both few many much
more most other another such what which who whom whose when where why how
i you he she it we they me him her us them my your his its our their mine
yours hers ours theirs myself yourself himself herself itself ourselves
themselves one ones someone anyone everyone nobody something anything
everything nothing
am is are was were be been being have has had having do does did doing will
would shall should can could may might must ought need dare
and or but nor so yet for because although though while if unless until
since as than whether once
in on at by with from into onto of off about above below under over between
among through during before after against around near behind beyond except
within without up down out to
not never always often sometimes usually rarely here there now then soon
already still just only even also too very quite rather really almost
again away back else ever far indeed instead later maybe perhaps please
quickly slowly together well yes yeah no nope ok okay oh hey hi hello thanks
thank welcome sorry bye goodbye
""".split()

COMMON_VERBS = """
accept add agree allow answer appear ask attach avoid become begin believe
boot break bring build buy call cancel care carry change check choose clean
clear click close come compile configure confirm connect consider contain
continue copy crash create cut decide delete depend describe differ disable
disconnect download drag drop edit enable end enter exist expect explain
extract fail fall feel fetch figure fill find finish fix follow forget
format freeze get give go google grab guess hang happen hate have hear help
hide hit hold hope ignore include install join keep kill know launch learn leave
let like list listen live load lock log login look lose make manage mean
mention mind miss mount move need notice open paste pay pick ping play
plug point post prefer press prevent print pull push put quit read reboot
receive recommend refresh reinstall remember remove rename repeat replace
reply report require reset resize restart restore return run save say see
seem select sell send set setup share show shut sign solve sound speak
start stay stop store succeed suggest support suppose switch sync take talk
tell test think try turn type understand uninstall unmount unplug update
upgrade upload use wait wake want watch wipe wish wonder work write
""".split()

COMMON_NOUNS = """
access account address answer application apps archive argument audio
backup bar battery bit board book boot bootloader box browser bug build
button cable card case cd change channel chat click client code color
command comment community computer config configuration connection console
content control copy core cpu cursor data database day desktop detail
device dialog directory disc disk display document dollar drive driver
edition editor email end environment error event example extension file
filesystem firewall firmware fix folder font forum friend game gig group
guide guy hand hardware head help home host hour icon idea image info
information input instance internet issue job kernel key keyboard kind
language laptop level library line link linux list log login machine mail
man manager memory menu message method minute mirror mode model moment
money monitor month morning mouse music name network night note number
option output package page panel part partition password patch path people
permission person phone picture place player point port post power problem
process processor program project question reason release repo repository
request resolution response result room root router row screen screenshot
script search second section security sense server service session settings
setup side site size software solution sound source space speed start
station step stick stuff support system tab table target task team terminal
text thing time tip title tool topic trash tutorial type update upgrade
user username version video way web website week window wifi word work
world year
""".split()

COMMON_ADJECTIVES = """
able actual available bad basic best better big black blue broken busy
careful cheap clean clear close cold common compatible complete cool
correct current custom dead default different difficult direct dirty double
down due early easy empty enough exact external extra fast fine first fresh
full future general good graphical great green happy hard heavy high huge
important impossible internal invalid large last late latest left light
little live local long low main manual minor missing multiple native new
next nice normal odd official old only open original other own particular
perfect personal physical plain popular portable possible previous primary
private proper public quick ready real recent red regular related remote
right safe same секond separate short similar simple single slow small
smart special specific stable standard strange strong stupid sure technical
temporary terrible third tiny top total tricky true unable unique unknown
upper useful usual various virtual visible weird white whole wireless wrong
young
""".split()

TECH_TERMS = """
apt apt-get aptitude sudo dpkg grub bash shell ssh scp ftp http https html
css php python perl java javascript mysql postgres sqlite nginx apache
firefox chromium chrome thunderbird nautilus gnome kde xfce unity compiz
xorg x11 wayland pulseaudio alsa ffmpeg vlc gimp libreoffice wine steam
ubuntu debian fedora arch mint kubuntu xubuntu lubuntu edubuntu canonical
launchpad ppa deb rpm tar gz zip iso img md5 sha256 gpg pgp ssl tls vpn
dns dhcp ip tcp udp nat lan wan usb hdmi vga dvi sata ide raid lvm ext2
ext3 ext4 ntfs fat32 swap tmpfs proc sys dev etc usr var opt mnt media
bin sbin lib boot fsck mkfs fdisk gparted parted mount umount chmod chown
chroot ln cp mv rm ls cd pwd cat less grep sed awk find locate which
whereis man info echo touch mkdir rmdir df du ps top htop kill killall
pkill nice renice jobs bg fg nohup screen tmux cron crontab systemd
systemctl upstart init initramfs vmlinuz udev modprobe lsmod insmod rmmod
lspci lsusb dmesg syslog journalctl ifconfig iwconfig iptables ufw route
ping traceroute netstat nmap wget curl rsync git svn cvs hg diff patch
make cmake gcc g++ clang ld configure makefile kernel module daemon cli
gui api urls url config sudoers fstab xinitrc bashrc profile alias env
localhost root admin administrator dir subdirectory symlink tarball
codec codecs plugin plugins repo repos backport backports universe
multiverse restricted livecd live-cd wubi virtualbox vmware qemu kvm xen
dual-boot dualboot bootable flashdrive pendrive partition partitions
resolution driver drivers nvidia radeon intel ati amd broadcom realtek
firmware bios uefi efi mbr gpt terminal tty ctrl alt del esc tab shift
f1 f2 f3 f4 f5 f6 f7 f8 f9 f10 f11 f12 gksudo kdesudo synaptic
software-center update-manager ppc amd64 i386 x86 x64 arm 64bit 32bit
64-bit 32-bit warty hoary breezy dapper edgy feisty gutsy hardy intrepid
jaunty karmic lucid maverick natty oneiric precise quantal raring saucy
trusty utopic vivid wily xenial yakkety zesty artful bionic cosmic disco
eoan focal groovy hirsute impish jammy kinetic lunar mantic noble
freenode irc xchat pidgin empathy lol haha hmm btw idk imo afaik iirc fyi
thx pls plz ppl u r ur im dont cant wont isnt doesnt didnt ive youre
theyre whats thats hes shes
restaurant restaurants food cuisine price range cheap moderate expensive
north south east west centre center town city area part postcode phone
number address booking book table reservation chinese italian indian
mexican turkish portuguese british french japanese korean thai vietnamese
gastropub bar pub cafe coffee pizza noodle noodles seafood vegetarian
""".split()

STOPWORDS = """
a about above after again against all am an and any are as at be because
been before being below between both but by cant cannot could did do does
doing dont down during each few for from further had has have having he
her here hers herself him himself his how i if in into is it its itself
just me more most my myself no nor not now of off on once only or other
our ours ourselves out over own same she should so some such than that the
their theirs them themselves then there these they this those through to
too under until up very was we were what when where which while who whom
why will with would you your yours yourself yourselves im ive id youre
youve youd hes shes its weve theyre theyve isnt arent wasnt werent hasnt
havent hadnt doesnt didnt wont wouldnt shant shouldnt cant couldnt mustnt
lets thats whos whats heres theres whens wheres whys hows ok okay yeah yes
oh hey hi hello thanks thank please well also get got one two like know
need want see say said going go goes gone really still just even much
many lot bit thing things way sure
""".split()

SHELL_COMMANDS = """
ls cd pwd cat less more grep sed awk find locate which whereis man info
echo touch mkdir rmdir rm cp mv ln df du ps top htop kill killall pkill
jobs bg fg nohup screen tmux cron crontab sudo su chmod chown chroot
mount umount fsck mkfs fdisk parted gparted apt apt-get aptitude dpkg
synaptic snap pip cargo npm make cmake gcc configure tar gzip gunzip zip
unzip ssh scp ftp sftp wget curl rsync git svn diff patch ping traceroute
netstat nmap ifconfig iwconfig iptables ufw route systemctl service
reboot shutdown halt poweroff exit logout startx vim vi nano emacs gedit
dmesg lspci lsusb lsmod modprobe insmod rmmod uname whoami passwd adduser
useradd userdel groupadd visudo update-grub grub-install xrandr xkill
alsamixer amixer pactl help version
""".split()

BADWORDS = """
arse arsehole asshole bastard bitch bollocks bullshit crap damn dammit
dick dickhead douche douchebag dumbass fuck fucked fucker fucking
goddamn jackass jerk moron motherfucker piss pissed prick shit shite
shitty slut twat wanker whore
""".split()

# Tagged closed-class / common-word lexicon for the entity miner's tagger.
# Tags: DET PRON PREP CONJ AUX VERB ADV ADJ NUM
POS = {}

def tag_all(tag, words):
    for w in words.split():
        POS.setdefault(w, tag)

tag_all("DET", """the a an this that these those some any no each every all
    both few several many much more most other another such own same""")
tag_all("PRON", """i you he she it we they me him her us them my your his
    its our their mine yours hers ours theirs myself yourself himself
    herself itself ourselves themselves someone anyone everyone nobody
    something anything everything nothing who whom whose which what one""")
tag_all("PREP", """in on at by with from into onto of off about above below
    under over between among through during before after against around
    near behind beyond except within without up down out to for since
    until as than like via per""")
tag_all("CONJ", """and or but nor so yet because although though while if
    unless whether once when where""")
tag_all("AUX", """am is are was were be been being have has had having do
    does did doing will would shall should can could may might must need
    dare wont dont cant isnt arent didnt doesnt""")
tag_all("ADV", """not never always often sometimes usually rarely here
    there now then soon already still just only even also too very quite
    rather really almost again away back else ever far indeed instead
    later maybe perhaps please quickly slowly together well yes yeah no
    nope ok okay oh hey hi hello thanks sorry why how""")
tag_all("VERB", " ".join("""
    accept add agree allow answer appear ask attach avoid become begin
    believe boot break bring build buy call cancel care carry change check
    choose clean clear click close come compile configure confirm connect
    consider contain continue copy crash create cut decide delete depend
    describe differ disable disconnect download drag drop edit enable end enter
    exist expect explain extract fail fall feel fetch figure fill find
    finish fix follow forget format freeze get give go goto google grab
    guess hang happen hate hear help hide hit hold hope ignore include
    install join keep kill know launch learn leave let list listen live load
    lock log look lose make manage mean mention mind miss mount move need
    notice open paste pay pick ping play plug point post prefer press
    prevent print pull push put quit read reboot receive recommend refresh
    reinstall remember remove rename repeat replace reply report require
    reset resize restart restore return run save say see seem select sell
    send set share show shut sign solve sound speak stand start stay stop store
    succeed suggest support suppose switch sync take talk tell test thank
    think try turn type understand uninstall unmount unplug update upgrade
    upload use wait wake want watch wipe wish wonder work write seen said
    told got went came took found gave made knew saw thought wanted tried
    used asked needed worked called looks seems shows serve serves serving
    served caters
    """.split()))
tag_all("ADJ", """able actual available bad basic best better big black
    blue broken busy careful cheap clean clear close cold common
    compatible complete cool correct current custom dead default different
    difficult direct dirty double down due early easy empty enough exact
    expensive external extra fast fine first fresh full future general
    good graphical great green happy hard heavy high huge important
    impossible internal invalid large last late latest left light little
    live local long low main manual minor missing moderate moderately
    multiple native new next nice normal odd official old only open
    original particular perfect personal physical plain popular portable
    possible previous primary private proper public quick ready real
    recent red regular related remote right safe second several short
    similar simple single slow small smart special specific stable
    standard strange strong sure technical temporary terrible third tiny
    top total tricky true unable unique unknown upper useful usual various
    virtual visible weird white whole wireless wrong young north south
    east west northern southern eastern western cheapest priced mid-range
    midrange""")
tag_all("NUM", """zero one two three four five six seven eight nine ten
    eleven twelve twenty thirty forty fifty hundred thousand million
    first second third fourth fifth""")


def write_list(name, words):
    words = sorted(set(w.strip().lower() for w in words if w.strip()))
    with open(os.path.join(OUT, name), "w") as f:
        f.write("\n".join(words) + "\n")
    print(f"{name}: {len(words)}")


# 200-utterance chat-style labeled mini-set (question dialogue act vs other),
# pre-shuffled so rows 1-150 are the train half and rows 151-200 the test half.
NPS_SUBJECTS = [
    "the installer", "the live cd", "the new kernel", "grub", "the wifi driver",
    "apt", "the mirror", "the login screen", "suspend", "the sound card",
    "the release notes", "the backup script", "the proxy", "the firewall",
    "the desktop",
]

NPS_QUESTIONS = [
    "what is the latest ubuntu version",
    "what time does the meeting start",
    "what package provides the ssh client",
    "what does this error even mean",
    "what kernel are you running right now",
    "what filesystem did you pick for the root partition",
    "how do i mount a usb drive",
    "how can i reset my password",
    "how long does the upgrade usually take",
    "how much ram does that old box have",
    "how did you get the printer working",
    "where is the apache config file",
    "where did you download the iso from",
    "where can i find the release notes",
    "why does my wifi keep dropping",
    "why is the mirror so slow today",
    "when is the next lts release due",
    "when did you last reboot the server",
    "who maintains the kernel package these days",
    "who else is seeing this crash",
    "can anyone help me with grub",
    "can you paste the full log somewhere",
    "could someone explain this backtrace to me",
    "could you share your config please",
    "would it help to purge the package first",
    "should i upgrade to the new release now",
    "is there a mirror closer to europe",
    "is the wiki down for anyone else",
    "are the repos signed these days",
    "are you on the stable branch",
    "do you know a fix for this panic",
    "does the live cd support ppc machines",
    "did the patch land in stable yet",
    "any ideas?",
    "network manager or plain ifupdown?",
    "fresh install or dist upgrade?",
    "anyone?",
    "that sounds wrong, no?",
    "so it just works out of the box?",
    "you rebooted after the update, right?",
    "anyone know a good irc client for the terminal",
    "anyone know if warty runs on ppc",
    "anyone tried the beta on a laptop",
    "i was wondering what is the latest ubuntu version released",
    "i was wondering if the installer supports raid",
    "i was wondering how you got sound working",
    "i was wondering where the logs end up",
    "tell me what is in the changelog",
    "tell me how you fixed the driver",
    "just curious, does suspend work for you",
] + [f"what happened to {s}" for s in NPS_SUBJECTS] + [
    f"how do i configure {s}" for s in NPS_SUBJECTS
] + [f"is {s} working for you" for s in NPS_SUBJECTS[:10]] + [
    f"where does {s} keep its settings" for s in NPS_SUBJECTS[:10]
]

NPS_OTHERS = [
    "hello everyone",
    "good morning all",
    "hey folks, long time no see",
    "thanks a lot, that fixed it",
    "thank you both for the patience",
    "the upgrade finished without errors",
    "my laptop boots fine now",
    "i installed the driver from the repo",
    "the server rebooted twice last night",
    "brb, coffee",
    "lol that bug again",
    "haha classic",
    "try purging the package first",
    "run the updater and then reboot",
    "check the permissions on that folder",
    "read the release notes before upgrading",
    "the mirror finished syncing an hour ago",
    "sounds like a hardware fault to me",
    "that patch landed yesterday",
    "i agree with the plan",
    "nice work on the writeup",
    "see you tomorrow",
    "back in five minutes",
    "the build passed on the second try",
    "i pushed the fix to the branch",
    "my vote goes to the simpler layout",
    "the screen flickers once and then settles",
    "we moved the box to the new rack",
    "dinner time, logging off",
    "the backup ran clean overnight",
    "i filed the report this morning",
    "the cable was loose, all good now",
    "same here, works fine",
    "good catch, updating the wiki now",
    "the meeting moved to thursday",
    "i will test the beta over the weekend",
    "that machine only has one gig of ram",
    "the download finished at last",
    "fair point, i withdraw the objection",
    "congrats on the release",
    "the fan noise went away after the bios update",
    "i swapped the disk and restored from backup",
    "the office network came back around noon",
    "good night all",
    "the printer finally spat out the test page",
    "we froze the branch for the release",
    "that was the missing piece, cheers",
    "the logs rotated so the old entries are gone",
    "i moved the session to the other channel",
    "the battery lasts about four hours now",
] + [f"{s} works fine here" for s in NPS_SUBJECTS] + [
    f"i reinstalled {s} yesterday" for s in NPS_SUBJECTS
] + [f"{s} crashed again this morning" for s in NPS_SUBJECTS[:10]] + [
    f"leave {s} alone for now" for s in NPS_SUBJECTS[:10]
]


def write_nps():
    import random

    qs = NPS_QUESTIONS[:100]
    os_ = NPS_OTHERS[:100]
    assert len(qs) == 100 and len(os_) == 100
    rows = [("Q", t) for t in qs] + [("O", t) for t in os_]
    random.Random(7).shuffle(rows)
    with open(os.path.join(OUT, "nps_mini.tsv"), "w") as f:
        for label, text in rows:
            assert "\t" not in text
            f.write(f"{label}\t{text}\n")
    train_q = sum(1 for label, _ in rows[:150] if label == "Q")
    test_q = sum(1 for label, _ in rows[150:] if label == "Q")
    print(f"nps_mini.tsv: 200 rows (train Q={train_q}/150, test Q={test_q}/50)")


# 50-conversation pipeline fixture: themed ubuntu-style support chats with
# light IRC noise (timestamps, <nick> prefixes, off-language lines, adjacent
# duplicates) so the cleaning stage has real work to do.
FIXTURES = os.path.join(os.path.dirname(__file__), "..", "crates", "cli", "tests", "fixtures")

THEMES = {
    "network": [
        "my wireless card is not working after the last update",
        "how do i connect to the network from the terminal ?",
        "check if the driver module is loaded first",
        "can you ping the gateway from there ?",
        "the connection drops every few minutes on 12.04",
        "try a fresh driver from the extra repository",
        "the network manager shows no wireless at all",
        "it works fine here after a reboot",
    ],
    "packages": [
        "apt-get keeps failing with a broken package error",
        "which mirror server are you using right now ?",
        "run apt-get update before you install anything",
        "how do i remove a package without losing the settings ?",
        "the package manager says the version is not available",
        "add the new repository and update again",
        "that package needs the latest library from 13.04",
        "thanks, the install worked this time",
    ],
    "boot": [
        "the machine hangs on a black screen during boot",
        "what does the boot log say about the kernel ?",
        "hold shift to open the grub menu on start",
        "is the first boot entry pointing at the old kernel ?",
        "the splash screen freezes right after the logo",
        "boot the previous kernel from the grub menu",
        "the recovery mode starts fine every time",
        "good, so the new kernel is the problem",
    ],
    "sound": [
        "there is no sound at all after the upgrade",
        "does the volume control show the right output device ?",
        "open the sound settings and pick the analog output",
        "why is the microphone level stuck at zero ?",
        "the sound card shows up but stays silent",
        "unmute the master channel in the mixer first",
        "music plays fine from the other account",
        "then the settings in your profile are wrong",
    ],
    "display": [
        "the screen resolution drops to 800x600 after login",
        "which display driver does the system use now ?",
        "install the recommended driver from the driver manager",
        "can i set a custom resolution for the second monitor ?",
        "the external monitor stays black on the new machine",
        "switch the cable and check the monitor settings",
        "the graphical session restarts when i plug the cable",
        "update the driver first, that bug is known",
    ],
}

GARBAGE_LINES = [
    "zzgh qwpt vmlx brkk szzt",
    "qqrw pltz xkcd fmmb",
    "mxr ploq zzt wqn vbk",
]


def load_lexicon_sets():
    words = set()
    for name in ("english_words.txt", "tech_terms.txt", "shell_commands.txt"):
        with open(os.path.join(OUT, name)) as f:
            words.update(w.strip() for w in f if w.strip())
    return words


def word_cores(text):
    cores = []
    for token in text.split():
        # mirror word_core: trim non-alphanumeric edges, lowercase
        start, end = 0, len(token)
        while start < end and not token[start].isalnum():
            start += 1
        while end > start and not token[end - 1].isalnum():
            end -= 1
        if end > start:
            cores.append(token[start:end].lower())
    return cores


def is_known(words, token):
    if token == "bw" or any(c.isdigit() for c in token):
        return True
    if token in words:
        return True
    for suf in ("s", "es", "ed", "ing", "ly"):
        if token.endswith(suf) and len(token) - len(suf) >= 2 and token[: -len(suf)] in words:
            return True
    return False


def coverage(words, text):
    cores = word_cores(text)
    if not cores:
        return 0.0
    return sum(1 for c in cores if is_known(words, c)) / len(cores)


def write_pipeline_corpus():
    import json
    import random

    rng = random.Random(41)
    words = load_lexicon_sets()
    for theme, lines in THEMES.items():
        for line in lines:
            cov = coverage(words, line)
            assert cov >= 0.5, f"{theme}: {line!r} coverage {cov:.2f}"
    for line in GARBAGE_LINES:
        assert coverage(words, line) < 0.5, f"garbage survives: {line!r}"

    speakers = ["dana", "eli", "mira", "noah"]
    themes = sorted(THEMES)
    os.makedirs(FIXTURES, exist_ok=True)
    out_path = os.path.join(FIXTURES, "corpus_small.jsonl")
    kept_windows = 0
    with open(out_path, "w") as f:
        for i in range(50):
            theme = themes[i % len(themes)]
            pool = THEMES[theme]
            n = rng.choice([4, 5, 5, 6])
            start = rng.randrange(len(pool))
            texts = [pool[(start + j) % len(pool)] for j in range(n)]
            kept_windows += max(0, n - 3)
            utts = []
            for j, text in enumerate(texts):
                speaker = speakers[(i + j) % len(speakers)]
                noisy = text
                style = rng.random()
                if style < 0.15:
                    noisy = f"[{rng.randrange(10, 23)}:{rng.randrange(10, 59):02d}] {text}"
                elif style < 0.3:
                    noisy = f"<{speaker}> {text}"
                utts.append({"speaker": speaker, "text": noisy})
                if rng.random() < 0.08:
                    utts.append({"speaker": speaker, "text": noisy})  # adjacent dup
            if rng.random() < 0.25:
                at = rng.randrange(len(utts) + 1)
                utts.insert(at, {"speaker": None, "text": rng.choice(GARBAGE_LINES)})
            conv = {"id": f"conv-{i + 1:02d}", "source": "ubuntu2", "utterances": utts}
            f.write(json.dumps(conv) + "\n")
    print(f"corpus_small.jsonl: 50 conversations, >= {kept_windows} windows after cleaning")


def main():
    os.makedirs(OUT, exist_ok=True)
    english = set(FUNCTION_WORDS + COMMON_VERBS + COMMON_NOUNS + COMMON_ADJECTIVES)
    # keep the list plain ascii
    english = {w for w in english if w.isascii() and w.isalpha() or "-" in w}
    write_list("english_words.txt", english)
    write_list("tech_terms.txt", [w for w in TECH_TERMS if w.isascii()])
    write_list("stopwords.txt", STOPWORDS)
    write_list("shell_commands.txt", SHELL_COMMANDS)
    write_list("badwords.txt", BADWORDS)
    with open(os.path.join(OUT, "pos_lexicon.tsv"), "w") as f:
        for w in sorted(POS):
            if w.isascii():
                f.write(f"{POS[w]}\t{w}\n")
    print(f"pos_lexicon.tsv: {len(POS)}")
    write_nps()
    write_pipeline_corpus()


if __name__ == "__main__":
    main()
